use std::process::ExitCode;

use qbsde::report::{run_criterion, CRITERIA};

fn main() -> ExitCode {
    let mut failed = 0;
    for (id, _, limit) in CRITERIA {
        let row = run_criterion(id).expect("known criterion");
        let secs = row.elapsed.as_secs_f64();
        let in_time = limit.is_none_or(|l| secs < l);
        let pass = row.pass && in_time;
        let timing = match limit {
            Some(l) if !in_time => format!(" [over the {l} s limit]"),
            _ => String::new(),
        };
        println!(
            "{id} {} {} ({secs:.2} s): {}{timing}",
            if pass { "PASS" } else { "FAIL" },
            row.title,
            row.detail
        );
        failed += usize::from(!pass);
    }
    println!("acceptance: {} passed, {failed} failed", CRITERIA.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
