use std::path::PathBuf;

use gridforge_core::presets::{preset, preset_names};
use gridforge_core::scenario::{parse_scenario, ScenarioFile};

fn shipped_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

#[test]
fn shipped_files_match_presets() {
    for name in preset_names() {
        let path = shipped_dir().join(format!("{name}.toml"));
        let (file, scenario) = parse_scenario(&path).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(file, preset(&name).unwrap(), "{name} drifted from its preset");
        assert_eq!(scenario.name, name);
    }
}

#[test]
fn echo_is_a_fixpoint_for_every_preset() {
    for name in preset_names() {
        let file = preset(&name).unwrap();
        let text = file.echo();
        let back = ScenarioFile::from_toml(&text, &name).unwrap();
        assert_eq!(back, file);
        assert_eq!(back.echo(), text);
    }
}
