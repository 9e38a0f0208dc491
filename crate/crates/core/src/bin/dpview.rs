use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};

use dpview::harness::config::KEYS;
use dpview::harness::{audit_run, run_trials, summarize, to_json_lines, ExperimentConfig, RunError};

const EXIT_AUDIT: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;

fn command() -> Command {
    let mut cmd = Command::new("dpview")
        .about("Simulate DP view maintenance over two secret-sharing servers")
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("PATH")
                .help("key=value configuration file"),
        )
        .arg(
            Arg::new("out")
                .long("out")
                .value_name("PATH")
                .help("write metrics as JSON lines here instead of stdout"),
        )
        .arg(
            Arg::new("trials")
                .long("trials")
                .value_name("N")
                .value_parser(clap::value_parser!(u64).range(1..))
                .default_value("1")
                .help("independent trials with seeds seed, seed+1, ..."),
        )
        .arg(
            Arg::new("transcript")
                .long("transcript")
                .value_name("PATH")
                .help("write the first trial's transcript as JSON lines"),
        )
        .arg(
            Arg::new("audit")
                .long("audit")
                .action(ArgAction::SetTrue)
                .help("audit every trial's transcript; exit 1 on violations"),
        )
        .arg(
            Arg::new("scan-cache")
                .long("scan-cache")
                .action(ArgAction::SetTrue)
                .help("answer queries over the view and the cache"),
        );
    for key in KEYS {
        cmd = cmd.arg(
            Arg::new(*key)
                .long(*key)
                .value_name("VALUE")
                .help_heading("Config overrides"),
        );
    }
    cmd
}

fn build_config(m: &ArgMatches) -> Result<Option<ExperimentConfig>, String> {
    let mut cfg = ExperimentConfig::default();
    let mut given = false;
    if let Some(path) = m.get_one::<String>("config") {
        let text = fs::read_to_string(path).map_err(|e| format!("{path}: {e}"))?;
        cfg.apply_text(&text).map_err(|e| format!("{path}: {e}"))?;
        given = true;
    }
    for key in KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            cfg.set(key, v).map_err(|e| e.to_string())?;
            given = true;
        }
    }
    if m.get_flag("scan-cache") {
        cfg.scan_cache = true;
    }
    if !given {
        return Ok(None);
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(Some(cfg))
}

fn write_out(path: Option<&String>, text: &str) -> Result<(), String> {
    match path {
        Some(p) => fs::write(PathBuf::from(p), text).map_err(|e| format!("{p}: {e}")),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let mut cmd = command();
    let m = cmd.clone().get_matches();
    let cfg = match build_config(&m) {
        Ok(Some(c)) => c,
        Ok(None) => {
            eprintln!("error: no --config and no overrides given\n");
            eprintln!("{}", cmd.render_usage());
            return ExitCode::from(EXIT_CONFIG);
        }
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let trials = *m.get_one::<u64>("trials").expect("defaulted");
    let runs = match run_trials(&cfg, trials) {
        Ok(r) => r,
        Err(RunError::Config(e)) => {
            eprintln!("config error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
        Err(RunError::Transform(e)) => {
            eprintln!("config error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
        Err(e) => {
            eprintln!("data error: {e}");
            return ExitCode::from(EXIT_DATA);
        }
    };

    let records: Vec<_> = runs.iter().flat_map(|r| r.metrics.iter().cloned()).collect();
    if let Err(e) = write_out(m.get_one::<String>("out"), &to_json_lines(&records)) {
        eprintln!("data error: {e}");
        return ExitCode::from(EXIT_DATA);
    }
    if let Some(p) = m.get_one::<String>("transcript") {
        let text: String = runs[0]
            .transcript
            .events()
            .iter()
            .map(|e| serde_json::to_string(e).expect("event serializes") + "\n")
            .collect();
        if let Err(e) = write_out(Some(p), &text) {
            eprintln!("data error: {e}");
            return ExitCode::from(EXIT_DATA);
        }
    }

    let s = summarize(&records);
    eprintln!(
        "protocol={} trials={} queries={} mean_l1={:.3} mean_relative={:.4} final_view_rows={:.1} mean_cost={:.1}",
        cfg.protocol, trials, s.records, s.mean_l1, s.mean_relative, s.final_view_rows, s.mean_cost
    );

    if m.get_flag("audit") {
        let mut failed = false;
        for run in &runs {
            let report = audit_run(run);
            if report.passed() {
                eprintln!("trial {}: {report}", run.trial);
            } else {
                failed = true;
                for v in &report.violations {
                    println!("trial={} {v}", run.trial);
                }
            }
        }
        if failed {
            return ExitCode::from(EXIT_AUDIT);
        }
    }
    ExitCode::SUCCESS
}
