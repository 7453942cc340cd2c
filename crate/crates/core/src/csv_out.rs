//! Result CSV: a header row, one row per recorded step, then the metrics
//! block as `# key=value` comment lines.
//!
//! Column order is `t`, then per device `omega_hz, theta_rad, gamma_pu,
//! p_out_mw, q_out_mvar, v_out_pu` prefixed with the device name, then
//! `bus<id>_v_pu` per bus, then `bus<id>_v_kv` on the 230 kV base.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::ScenarioError;
use crate::grid::BASE_KV;
use crate::sim::{compute_metrics, IslandEpoch, Metrics, MetricsInput, SimulationResult};

pub const DEVICE_COLUMNS: [&str; 6] = ["omega_hz", "theta_rad", "gamma_pu", "p_out_mw", "q_out_mvar", "v_out_pu"];

pub fn header(result: &SimulationResult) -> Vec<String> {
    let mut cols = vec!["t".to_string()];
    for d in &result.devices {
        cols.extend(DEVICE_COLUMNS.iter().map(|c| format!("{}_{c}", d.name)));
    }
    cols.extend(result.bus_ids.iter().map(|b| format!("bus{b}_v_pu")));
    cols.extend(result.bus_ids.iter().map(|b| format!("bus{b}_v_kv")));
    cols
}

fn format_groups(groups: &[Vec<usize>]) -> String {
    groups.iter().map(|g| g.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",")).collect::<Vec<_>>().join("|")
}

fn metrics_block(result: &SimulationResult) -> Vec<(String, String)> {
    let m = &result.metrics;
    let mut lines = vec![
        ("scenario".to_string(), result.scenario.clone()),
        ("nadir_hz".into(), m.nadir_hz.to_string()),
        ("rocof_max_hz_s".into(), m.rocof_max_hz_s.to_string()),
        ("recovery_s".into(), m.recovery_s.map_or("none".into(), |r| r.to_string())),
        ("max_angle_spread_rad".into(), m.max_angle_spread_rad.to_string()),
        ("survival".into(), m.survival.to_string()),
        ("collapse".into(), result.collapsed().to_string()),
        ("disturbance_t".into(), result.disturbance_t.to_string()),
        ("max_balance_residual_pu".into(), result.max_balance_residual.to_string()),
        ("final_max_derivative".into(), result.final_max_derivative.to_string()),
    ];
    for e in &result.epochs {
        lines.push(("epoch".into(), format!("{}:{}", e.t, format_groups(&e.groups))));
    }
    for c in &result.collapses {
        let buses: Vec<String> = c.buses.iter().map(|b| b.to_string()).collect();
        lines.push(("collapse_at".into(), format!("{}:{}", c.t, buses.join(","))));
    }
    lines
}

pub fn csv_string(result: &SimulationResult) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header(result)).expect("in-memory write");
    for i in 0..result.t.len() {
        let mut row = vec![result.t[i].to_string()];
        for s in &result.series {
            for col in [&s.omega_hz, &s.theta_rad, &s.gamma_pu, &s.p_out_mw, &s.q_out_mvar, &s.v_out_pu] {
                row.push(col[i].to_string());
            }
        }
        row.extend(result.bus_v_pu.iter().map(|v| v[i].to_string()));
        row.extend(result.bus_v_pu.iter().map(|v| (v[i] * BASE_KV).to_string()));
        w.write_record(&row).expect("in-memory write");
    }
    let mut text = String::from_utf8(w.into_inner().expect("flush")).expect("utf-8");
    for (k, v) in metrics_block(result) {
        text.push_str(&format!("# {k}={v}\n"));
    }
    text
}

pub fn write_csv(result: &SimulationResult, path: &Path) -> Result<(), ScenarioError> {
    std::fs::write(path, csv_string(result))
        .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })
}

/// A result CSV read back: series by column name plus the metrics block.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedCsv {
    pub columns: Vec<String>,
    pub data: Vec<Vec<f64>>,
    pub device_names: Vec<String>,
    pub block: BTreeMap<String, String>,
    pub epochs: Vec<IslandEpoch>,
    pub collapse: bool,
    pub disturbance_t: f64,
}

fn schema(message: impl Into<String>) -> ScenarioError {
    ScenarioError::Schema { path: "csv".into(), message: message.into() }
}

fn parse_f64(s: &str) -> Result<f64, ScenarioError> {
    s.trim().parse().map_err(|_| schema(format!("not a number: {s:?}")))
}

impl ParsedCsv {
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns.iter().position(|c| c == name).map(|i| self.data[i].as_slice())
    }

    fn device_column(&self, suffix: &str) -> Result<Vec<Vec<f64>>, ScenarioError> {
        self.device_names
            .iter()
            .map(|d| {
                let name = format!("{d}_{suffix}");
                self.column(&name).map(<[f64]>::to_vec).ok_or_else(|| schema(format!("missing column {name}")))
            })
            .collect()
    }

    /// Metrics computed from the parsed series.
    pub fn recompute_metrics(&self) -> Result<Metrics, ScenarioError> {
        let t = self.column("t").ok_or_else(|| schema("missing column t"))?;
        let freq = self.device_column("omega_hz")?;
        let theta = self.device_column("theta_rad")?;
        Ok(compute_metrics(&MetricsInput {
            t,
            freq_hz: &freq,
            theta_rad: &theta,
            epochs: &self.epochs,
            collapse: self.collapse,
            disturbance_t: self.disturbance_t,
        }))
    }

    /// Metrics as written in the trailing block.
    pub fn reported_metrics(&self) -> Result<Metrics, ScenarioError> {
        let get = |k: &str| self.block.get(k).ok_or_else(|| schema(format!("metrics block lacks {k}")));
        Ok(Metrics {
            nadir_hz: parse_f64(get("nadir_hz")?)?,
            rocof_max_hz_s: parse_f64(get("rocof_max_hz_s")?)?,
            recovery_s: match get("recovery_s")?.as_str() {
                "none" => None,
                v => Some(parse_f64(v)?),
            },
            max_angle_spread_rad: parse_f64(get("max_angle_spread_rad")?)?,
            survival: get("survival")? == "true",
        })
    }
}

pub fn parse_csv(text: &str) -> Result<ParsedCsv, ScenarioError> {
    let mut block = BTreeMap::new();
    let mut epochs = Vec::new();
    for line in text.lines().filter_map(|l| l.strip_prefix('#')) {
        let Some((k, v)) = line.trim().split_once('=') else { continue };
        if k == "epoch" {
            let (t, groups) = v.split_once(':').ok_or_else(|| schema(format!("bad epoch line {v:?}")))?;
            let groups = groups
                .split('|')
                .filter(|g| !g.is_empty())
                .map(|g| {
                    g.split(',').map(|d| d.parse().map_err(|_| schema(format!("bad device index {d:?}")))).collect()
                })
                .collect::<Result<_, _>>()?;
            epochs.push(IslandEpoch { t: parse_f64(t)?, groups });
        } else {
            block.insert(k.to_string(), v.to_string());
        }
    }

    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let columns: Vec<String> =
        reader.headers().map_err(|e| schema(e.to_string()))?.iter().map(str::to_string).collect();
    let mut data = vec![Vec::new(); columns.len()];
    for record in reader.records() {
        let record = record.map_err(|e| schema(e.to_string()))?;
        for (i, field) in record.iter().enumerate() {
            data[i].push(parse_f64(field)?);
        }
    }
    let device_names = columns.iter().filter_map(|c| c.strip_suffix("_omega_hz")).map(str::to_string).collect();
    let collapse = block.get("collapse").is_some_and(|v| v == "true");
    let disturbance_t = block.get("disturbance_t").map(|v| parse_f64(v)).transpose()?.unwrap_or(0.0);
    Ok(ParsedCsv { columns, data, device_names, block, epochs, collapse, disturbance_t })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{DeviceInfo, DeviceSeries};

    fn result() -> SimulationResult {
        let t: Vec<f64> = (0..5).map(|k| k as f64 * 0.01).collect();
        let series = DeviceSeries {
            omega_hz: vec![60.0, 59.9, f64::NAN, 59.95, 60.0],
            theta_rad: vec![0.0; 5],
            gamma_pu: vec![0.0; 5],
            p_out_mw: vec![10.0; 5],
            q_out_mvar: vec![1.0; 5],
            v_out_pu: vec![1.0; 5],
        };
        let mut r = SimulationResult {
            scenario: "tiny".into(),
            devices: vec![DeviceInfo { name: "g_1".into(), kind: "sg".into(), bus: 1 }],
            bus_ids: vec![1],
            t,
            series: vec![series],
            bus_v_pu: vec![vec![1.0, 0.9, 0.95, 1.0, 1.0]],
            epochs: vec![IslandEpoch { t: 0.0, groups: vec![vec![0]] }],
            collapses: vec![],
            disturbance_t: 0.01,
            max_balance_residual: 0.0,
            final_max_derivative: 0.0,
            metrics: Metrics {
                nadir_hz: 0.0,
                rocof_max_hz_s: 0.0,
                recovery_s: None,
                max_angle_spread_rad: 0.0,
                survival: true,
            },
        };
        r.metrics = r.recompute_metrics();
        r
    }

    #[test]
    fn header_order() {
        let h = header(&result());
        assert_eq!(h[0], "t");
        assert_eq!(h[1], "g_1_omega_hz");
        assert_eq!(h[6], "g_1_v_out_pu");
        assert_eq!(h[7..], ["bus1_v_pu".to_string(), "bus1_v_kv".to_string()]);
    }

    #[test]
    fn round_trip_preserves_series_and_metrics() {
        let r = result();
        let text = csv_string(&r);
        assert!(text.contains("# nadir_hz=59.9\n"));
        let p = parse_csv(&text).unwrap();
        assert_eq!(p.device_names, vec!["g_1"]);
        assert_eq!(p.column("t").unwrap(), r.t.as_slice());
        assert!(p.column("g_1_omega_hz").unwrap()[2].is_nan());
        assert_eq!(p.recompute_metrics().unwrap(), r.metrics);
        assert_eq!(p.reported_metrics().unwrap(), r.metrics);
        assert_eq!(p.epochs, r.epochs);
    }
}
