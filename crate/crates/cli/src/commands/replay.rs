use clap::{CommandFactory, Parser};

use crate::cli::{Cli, ReplayArgs};
use crate::error::{CliError, CliResult};
use crate::manifest::{replay_argv, SavedManifest};

/// Long flag of option `id` of subcommand `command`.
fn long_flag(command: &str, id: &str) -> Option<String> {
    let cli = Cli::command();
    let sub = cli.find_subcommand(command)?;
    let arg = sub.get_arguments().find(|a| a.get_id() == id)?;
    arg.get_long().map(str::to_string)
}

/// The command line a manifest records.
pub fn argv_of(saved: &SavedManifest) -> CliResult<Vec<String>> {
    if saved.command == "replay" || Cli::command().find_subcommand(&saved.command).is_none() {
        return Err(CliError::Usage(format!(
            "manifest records an unreplayable command {:?}",
            saved.command
        )));
    }
    replay_argv(saved, |id| long_flag(&saved.command, id))
}

pub fn run(args: &ReplayArgs) -> CliResult<()> {
    let saved = SavedManifest::read(&args.manifest)?;
    let argv = argv_of(&saved)?;
    println!("replaying: {}", argv[1..].join(" "));
    let cli = Cli::try_parse_from(&argv)
        .map_err(|e| CliError::Usage(format!("{}: {}", args.manifest.display(), e.to_string().trim())))?;
    super::run(cli.command)
}
