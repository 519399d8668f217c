// Drive a run from a JSON configuration, as the `qbsde` binary does.

use qbsde::cli::{run_check, run_solve};
use qbsde::ExperimentConfig;

pub fn run() -> qbsde::Result<()> {
    let cfg = ExperimentConfig::from_json(
        r#"{
            "schema": 1,
            "problem": {"inline": {"d": 1, "k": 1, "steps": 16, "a": [0.2], "b": [[0.3]],
                                   "forcing": [0.1], "terminal": "tanh"}},
            "solver": {"scheme": "step_explicit"}
        }"#,
    )?;
    let out = std::env::temp_dir().join("qbsde-json-config-example");
    run_solve(&cfg, &out)?;
    println!("{}", std::fs::read_to_string(out.join("solve.json"))?);

    let tevzadze =
        ExperimentConfig::from_json(r#"{"problem": {"builtin": "tevzadze", "params": {"xi_scale": 0.25}}}"#)?;
    run_check(&tevzadze, &out)?;
    println!("{}", std::fs::read_to_string(out.join("check.csv"))?);
    Ok(())
}

#[allow(dead_code)]
fn main() -> qbsde::Result<()> {
    run()
}
