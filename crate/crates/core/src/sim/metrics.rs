//! Frequency and angle metrics computed from recorded series only, so the
//! same numbers come out of the engine and out of a parsed CSV.

use std::f64::consts::PI;

pub const NOMINAL_HZ: f64 = 60.0;
/// Band around nominal that counts as recovered, Hz.
pub const RECOVERY_BAND_HZ: f64 = 0.05;
/// How long the band must hold, s.
pub const RECOVERY_HOLD_S: f64 = 1.0;
/// Half-width of the centred RoCoF difference, s.
pub const ROCOF_HALF_WINDOW_S: f64 = 0.05;

/// Device groups sharing an island from time `t` on. Offline devices are
/// absent.
#[derive(Debug, Clone, PartialEq)]
pub struct IslandEpoch {
    pub t: f64,
    pub groups: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Copy)]
pub struct MetricsInput<'a> {
    pub t: &'a [f64],
    /// Per device, NaN while offline.
    pub freq_hz: &'a [Vec<f64>],
    /// Per device angle relative to its island reference.
    pub theta_rad: &'a [Vec<f64>],
    pub epochs: &'a [IslandEpoch],
    pub collapse: bool,
    pub disturbance_t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub nadir_hz: f64,
    pub rocof_max_hz_s: f64,
    /// Seconds from the disturbance until frequency stays in band; `None`
    /// if it never does within the record.
    pub recovery_s: Option<f64>,
    pub max_angle_spread_rad: f64,
    pub survival: bool,
}

pub fn compute_metrics(input: &MetricsInput) -> Metrics {
    let t = input.t;
    let nadir_hz =
        input.freq_hz.iter().flat_map(|f| f.iter()).copied().filter(|f| f.is_finite()).fold(f64::INFINITY, f64::min);
    let nadir_hz = if nadir_hz.is_finite() { nadir_hz } else { NOMINAL_HZ };

    let max_angle_spread_rad = angle_spread(input);
    Metrics {
        nadir_hz,
        rocof_max_hz_s: rocof(t, input.freq_hz),
        recovery_s: recovery(t, input.freq_hz, input.disturbance_t),
        max_angle_spread_rad,
        survival: !input.collapse && max_angle_spread_rad < PI,
    }
}

fn rocof(t: &[f64], freq: &[Vec<f64>]) -> f64 {
    if t.len() < 3 {
        return 0.0;
    }
    let step = t[1] - t[0];
    let k = ((ROCOF_HALF_WINDOW_S / step).round() as usize).max(1);
    let mut worst = 0.0_f64;
    for f in freq {
        for i in k..t.len().saturating_sub(k) {
            let r = (f[i + k] - f[i - k]) / (t[i + k] - t[i - k]);
            if r.is_finite() {
                worst = worst.max(r.abs());
            }
        }
    }
    worst
}

fn out_of_band(f: f64) -> bool {
    f.is_finite() && (f - NOMINAL_HZ).abs() >= RECOVERY_BAND_HZ
}

fn recovery(t: &[f64], freq: &[Vec<f64>], disturbance_t: f64) -> Option<f64> {
    let n = t.len();
    let start = t.iter().position(|&x| x >= disturbance_t - 1e-12)?;
    let bad: Vec<bool> = (0..n).map(|i| freq.iter().any(|f| out_of_band(f[i]))).collect();
    let t_end = *t.last()?;

    // first index at or after `start` from which no sample is bad
    // for RECOVERY_HOLD_S
    let mut next_bad = n;
    let mut candidate = None;
    for i in (start..n).rev() {
        if bad[i] {
            next_bad = i;
            continue;
        }
        let held = next_bad == n || t[next_bad] > t[i] + RECOVERY_HOLD_S;
        if held && t[i] + RECOVERY_HOLD_S <= t_end + 1e-9 {
            candidate = Some(i);
        }
    }
    let i = candidate?;
    if i == start {
        return Some(t[i] - disturbance_t);
    }
    // interpolate the band crossing between the last bad sample and i
    let j = i - 1;
    let mut frac = 0.0_f64;
    for f in freq {
        if out_of_band(f[j]) && f[i].is_finite() {
            let (a, b) = ((f[j] - NOMINAL_HZ).abs(), (f[i] - NOMINAL_HZ).abs());
            if a > b {
                frac = frac.max((a - RECOVERY_BAND_HZ) / (a - b));
            } else {
                frac = 1.0;
            }
        }
    }
    Some(t[j] + frac.clamp(0.0, 1.0) * (t[i] - t[j]) - disturbance_t)
}

fn angle_spread(input: &MetricsInput) -> f64 {
    let mut worst = 0.0_f64;
    for (i, &ti) in input.t.iter().enumerate() {
        let Some(epoch) = input.epochs.iter().rev().find(|e| e.t <= ti + 1e-12) else { continue };
        for group in &epoch.groups {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &d in group {
                let a = input.theta_rad[d][i];
                if a.is_finite() {
                    lo = lo.min(a);
                    hi = hi.max(a);
                }
            }
            if hi >= lo {
                worst = worst.max(hi - lo);
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn grid(n: usize, dt: f64) -> Vec<f64> {
        (0..n).map(|k| k as f64 * dt).collect()
    }

    fn single(t: &[f64], f: Vec<f64>, theta: Vec<f64>) -> Metrics {
        let epochs = [IslandEpoch { t: 0.0, groups: vec![vec![0]] }];
        compute_metrics(&MetricsInput {
            t,
            freq_hz: &[f],
            theta_rad: &[theta],
            epochs: &epochs,
            collapse: false,
            disturbance_t: 0.0,
        })
    }

    #[test]
    fn quiescent_series() {
        let t = grid(2001, 1e-3);
        let m = single(&t, vec![60.0; t.len()], vec![0.0; t.len()]);
        assert_eq!(m.nadir_hz, 60.0);
        assert_eq!(m.rocof_max_hz_s, 0.0);
        assert_eq!(m.recovery_s, Some(0.0));
        assert!(m.survival);
    }

    #[test]
    fn exponential_recovery_crosses_at_ln10() {
        let t = grid(10_001, 1e-3);
        let f: Vec<f64> = t.iter().map(|t| 60.0 - 0.5 * (-t).exp()).collect();
        let m = single(&t, f, vec![0.0; t.len()]);
        assert_eq!(m.nadir_hz, 59.5);
        assert_abs_diff_eq!(m.recovery_s.unwrap(), 10f64.ln(), epsilon = 1e-4);
        // steepest slope at the start, 0.5 Hz/s, seen through the window
        assert!((m.rocof_max_hz_s - 0.5).abs() < 0.03, "{}", m.rocof_max_hz_s);
    }

    #[test]
    fn offset_never_recovers() {
        let t = grid(5001, 1e-3);
        let m = single(&t, vec![59.8; t.len()], vec![0.0; t.len()]);
        assert_eq!(m.recovery_s, None);
    }

    #[test]
    fn pole_slip_fails_survival() {
        let t = grid(100, 0.01);
        let theta: Vec<Vec<f64>> = vec![vec![0.0; 100], t.iter().map(|t| 4.0 * t).collect()];
        let f = vec![vec![60.0; 100]; 2];
        let epochs = [IslandEpoch { t: 0.0, groups: vec![vec![0, 1]] }];
        let m = compute_metrics(&MetricsInput {
            t: &t,
            freq_hz: &f,
            theta_rad: &theta,
            epochs: &epochs,
            collapse: false,
            disturbance_t: 0.0,
        });
        assert!(m.max_angle_spread_rad > PI);
        assert!(!m.survival);
    }

    #[test]
    fn separate_islands_do_not_count_toward_spread() {
        let t = grid(10, 0.1);
        let theta = vec![vec![0.0; 10], vec![5.0; 10]];
        let f = vec![vec![60.0; 10]; 2];
        let epochs = [IslandEpoch { t: 0.0, groups: vec![vec![0], vec![1]] }];
        let m = compute_metrics(&MetricsInput {
            t: &t,
            freq_hz: &f,
            theta_rad: &theta,
            epochs: &epochs,
            collapse: true,
            disturbance_t: 0.0,
        });
        assert_eq!(m.max_angle_spread_rad, 0.0);
        assert!(!m.survival, "collapse alone fails survival");
    }
}
