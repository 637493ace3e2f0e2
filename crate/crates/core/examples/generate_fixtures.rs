//! Writes the bundled problem files and their golden values.
//!
//! Run with `cargo run --release -p cis-core --example generate_fixtures [dir]`.
//! Golden values come from the enumeration oracle, never typed by hand.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use cis_core::instances::{
    overlapping_protocol_instance, random_instance, reset_discounted_instance, static_team, with_constant_cost, Preset,
    Shape,
};
use cis_core::model::{FiniteSpace, Mode, ProblemFile, ProblemSpec, ProtocolSpec};
use cis_core::oracle::{enumerate_basic_strategies, enumerate_coordinator_strategies, OracleConfig};
use cis_core::Error;
use serde_json::json;

fn binary(seed: u64, n: usize, horizon: usize, preset: Preset) -> ProblemSpec {
    random_instance(seed, Shape { n, states: 2, obs: 2, actions: 2, horizon }, &preset).unwrap()
}

fn write(dir: &Path, name: &str, file: &ProblemFile) {
    let text = serde_json::to_string_pretty(file).unwrap() + "\n";
    std::fs::write(dir.join(name), text).unwrap();
}

fn preset_file(spec: &ProblemSpec, preset: &Preset) -> ProblemFile {
    ProblemFile::from_spec(spec, preset.file_spec())
}

fn main() {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fixtures".into()));
    std::fs::create_dir_all(&dir).unwrap();
    let mut golden = BTreeMap::new();
    let mut record = |name: &str, spec: &ProblemSpec| {
        let config = OracleConfig::default();
        let report = match enumerate_basic_strategies(spec, &config) {
            Ok(report) => report,
            // too many basic strategies; the per-node search still applies
            Err(Error::Infeasible { .. }) => enumerate_coordinator_strategies(spec, &config).unwrap(),
            Err(e) => panic!("{name}: {e}"),
        };
        golden.insert(
            name.to_string(),
            json!({ "optimal_value": report.min_cost, "search": report.kind, "count": report.count }),
        );
    };

    let delayed = Preset::Delayed(1);
    let spec = binary(1, 2, 2, delayed.clone());
    write(&dir, "delayed_sharing_2x2.json", &preset_file(&spec, &delayed));
    record("delayed_sharing_2x2", &spec);

    let mut bad = preset_file(&spec, &delayed);
    if let cis_core::model::TransitionSpec::Kernel(slices) = &mut bad.transition {
        for p in &mut slices[0][1][1] {
            *p *= 0.9;
        }
    }
    write(&dir, "bad_kernel_row.json", &bad);

    let team = static_team(1).unwrap();
    write(&dir, "static_team.json", &preset_file(&team, &delayed));
    record("static_team", &team);

    let constant = with_constant_cost(binary(2, 2, 3, delayed.clone()), 0.75);
    write(&dir, "constant_cost.json", &preset_file(&constant, &delayed));

    let mut single = random_instance(3, Shape { n: 1, states: 1, obs: 1, actions: 3, horizon: 1 }, &delayed).unwrap();
    single.obs_spaces = vec![vec![FiniteSpace::new(1)]];
    write(&dir, "singleton.json", &preset_file(&single, &delayed));
    record("singleton", &single);

    let periodic = Preset::Periodic(2);
    let spec = binary(4, 1, 4, periodic.clone());
    write(&dir, "periodic_sharing.json", &preset_file(&spec, &periodic));
    record("periodic_sharing", &spec);

    let discounted = reset_discounted_instance(6, 0.9).unwrap();
    write(&dir, "discounted.json", &preset_file(&discounted, &delayed));

    let myopic = reset_discounted_instance(6, 0.0).unwrap();
    write(&dir, "discounted_zero.json", &preset_file(&myopic, &delayed));
    let mut one_step = myopic.clone();
    one_step.mode = Mode::Finite;
    one_step.discount = None;
    write(&dir, "discounted_zero_as_finite.json", &preset_file(&one_step, &delayed));

    write(&dir, "control_sharing_discounted.json", &preset_file(&discounted, &Preset::Control));

    let overlap = overlapping_protocol_instance(5).unwrap();
    let explicit = ProtocolSpec::Explicit { explicit: overlap.protocol.clone() };
    write(&dir, "overlap_protocol.json", &ProblemFile::from_spec(&overlap, explicit));

    std::fs::write(dir.join("malformed.json"), "{\n  \"n\": 1,\n  \"T\": 2,,\n  \"mode\": \"finite\"\n}\n").unwrap();

    let text = serde_json::to_string_pretty(&golden).unwrap() + "\n";
    std::fs::write(dir.join("golden.json"), text).unwrap();
}
