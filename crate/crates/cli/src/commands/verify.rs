use gradfaith::autodiff::gradcheck::DIFFERENTIABLE_OPS;
use gradfaith::autodiff::OpKind;

use super::create_parent;
use crate::cli::VerifyArgs;
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;
use crate::verify::{self, run_suite, SUITES};

pub fn run(args: &VerifyArgs) -> CliResult<()> {
    for s in &args.suite {
        if !SUITES.contains(&s.as_str()) {
            return Err(CliError::Usage(format!(
                "unknown suite {s:?}; suites are {}",
                SUITES.join(", ")
            )));
        }
    }
    let fault = match &args.inject_fault {
        None => None,
        Some(name) => Some(
            OpKind::from_name(name)
                .filter(|op| DIFFERENTIABLE_OPS.contains(op))
                .ok_or_else(|| {
                    let names: Vec<&str> = DIFFERENTIABLE_OPS.iter().map(|o| o.name()).collect();
                    CliError::Usage(format!("unknown operator {name:?}; operators are {}", names.join(", ")))
                })?,
        ),
    };
    let selected: Vec<&str> = SUITES
        .into_iter()
        .filter(|s| args.suite.is_empty() || args.suite.iter().any(|a| a == s))
        .collect();

    create_parent(&args.manifest)?;
    let mut manifest = RunManifest::new("verify", &args.manifest);
    manifest.args(args);
    manifest.set("config.suites", selected.join(","));
    manifest.set("config.fd_step", verify::FD_STEP);
    manifest.set("config.tolerance", verify::TOLERANCE);
    manifest.set("config.op_cases", verify::OP_CASES);
    manifest.write()?;

    let mut failed = Vec::new();
    for name in selected {
        let suite = run_suite(name, fault).expect("suite names were checked");
        println!("suite {}: {}/{} passed", suite.name, suite.passed(), suite.total());
        for check in suite.failures() {
            println!("  FAIL {}: {}", check.name, check.detail);
            failed.push(format!("{}/{}", suite.name, check.name));
        }
    }
    manifest.set("result.failures", failed.len());
    manifest.finish()?;
    if failed.is_empty() {
        println!("all checks passed");
        Ok(())
    } else {
        Err(CliError::Failed(format!("verification failed: {}", failed.join(", "))))
    }
}
