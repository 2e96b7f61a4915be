//! `fastscnn` command-line driver.

mod commands;
mod config;

use std::collections::BTreeMap;
use std::path::Path;
use std::process::ExitCode;

use clap::{Arg, ArgMatches, Command};

use commands::Failure;
use config::{flag_name, parse_file, Settings, KEYS};

fn cli() -> Command {
    let mut cmd = Command::new("fastscnn")
        .about("Fast semantic segmentation: train, run and measure the network")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(Arg::new("config").long("config").global(true).value_name("FILE").help("key=value config file; flags override it"));
    for k in KEYS {
        let mut arg = Arg::new(k.name).long(flag_name(k.name)).global(true).value_name("VALUE").help(format!(
            "{} [default: {}]",
            k.help,
            if k.default.is_empty() { "none" } else { k.default }
        ));
        if k.switch {
            arg = arg.num_args(0..=1).default_missing_value("true");
        }
        cmd = cmd.arg(arg);
    }
    cmd.subcommands([
        Command::new("summary").about("Print the layer table with shapes, parameters and MACs"),
        Command::new("train").about("Train on <data>/<train-split>, checkpointing into --out-dir"),
        Command::new("infer").about("Segment one image into a label PNG (cls) or a probability dump (prob)"),
        Command::new("eval").about("Class and category mIoU on <data>/<split>"),
        Command::new("bench").about("Forward-pass throughput after a warm-up"),
        Command::new("selftest").about("Kernel oracle, gradient, shape-trace and parameter-count checks"),
    ])
}

fn settings(m: &ArgMatches) -> Result<Settings, Failure> {
    let file = match m.get_one::<String>("config") {
        Some(p) => {
            let path = Path::new(p);
            let text = std::fs::read_to_string(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
            parse_file(&text, path)?
        }
        None => BTreeMap::new(),
    };
    let flags = KEYS.iter().filter_map(|k| m.get_one::<String>(k.name).map(|v| (k.name.to_string(), v.clone()))).collect();
    Ok(Settings::merge(&file, &flags))
}

fn run(name: &str, m: &ArgMatches) -> Result<(), Failure> {
    let s = settings(m)?;
    let threads = s.usize("threads")?;
    if threads == 0 {
        return Err(Failure::Usage("threads must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| Failure::Usage(format!("thread pool: {e}")))?;
    pool.install(|| match name {
        "summary" => commands::summary(&s),
        "train" => commands::train_cmd(&s),
        "infer" => commands::infer(&s),
        "eval" => commands::eval_cmd(&s),
        "bench" => commands::bench(&s),
        "selftest" => commands::selftest(&s),
        other => unreachable!("unregistered subcommand {other}"),
    })
}

fn main() -> ExitCode {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) if e.kind() == clap::error::ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
        Err(e) => {
            let text = e.to_string();
            eprintln!("{}", text.lines().next().unwrap_or("invalid arguments"));
            return ExitCode::from(1);
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand required");
    match run(name, sub) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message().replace('\n', " "));
            ExitCode::from(f.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_definition_is_consistent() {
        cli().debug_assert();
    }

    #[test]
    fn flags_reach_subcommands() {
        let m = cli().try_get_matches_from(["fastscnn", "summary", "--classes", "2", "--zero-skip"]).unwrap();
        let s = settings(m.subcommand().unwrap().1).unwrap();
        assert_eq!(s.raw("classes"), "2");
        assert_eq!(s.raw("zero_skip"), "true");
        assert!(cli().try_get_matches_from(["fastscnn", "summary", "--no-such-flag", "1"]).is_err());
    }
}
