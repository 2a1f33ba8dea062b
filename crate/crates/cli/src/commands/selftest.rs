use ic_align::selftest::run_all;

use crate::args::SelftestArgs;
use crate::CliError;

pub fn run(args: &SelftestArgs) -> Result<(), CliError> {
    let outcomes = run_all(args.seed);
    for o in &outcomes {
        println!(
            "{} {:<22} worst={:.3e} tolerance={:.1e}",
            if o.passed { "PASS" } else { "FAIL" },
            o.name,
            o.worst,
            o.tolerance
        );
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    if failed > 0 {
        return Err(CliError::Runtime(format!("{failed} self-check(s) failed")));
    }
    Ok(())
}
