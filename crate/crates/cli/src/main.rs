use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use marginflow_cli::bundled::bundled;
use marginflow_cli::compare::{compare, Metric};
use marginflow_cli::config::{DataSpec, ExperimentConfig};
use marginflow_cli::criteria::{Suite, Verifier};
use marginflow_cli::data_io::{build_dataset, write_csv};
use marginflow_cli::error::{CliError, Result};
use marginflow_cli::output::{fmt_num, OUTPUT_ROOT_VAR};
use marginflow_cli::run::{run, run_dir};

#[derive(Parser)]
#[command(name = "marginflow", version, about = "Gradient-flow experiments on deep ReLU networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a config (a JSON file or the name of a bundled config).
    #[command(after_help = format!("Outputs go to ${OUTPUT_ROOT_VAR}/<name> (default marginflow-out/<name>)."))]
    Run {
        config: String,
        /// Override the weight-initialization seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a verification suite and print one line per criterion.
    Verify { suite: Suite },
    /// Run two configs and compare a metric along aligned log-time.
    Compare {
        a: String,
        b: String,
        #[arg(long, value_enum)]
        metric: Metric,
    },
    /// Write the dataset described by a data spec JSON to CSV.
    GenData {
        spec: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
}

fn load(arg: &str) -> Result<ExperimentConfig> {
    let path = Path::new(arg);
    if !path.exists() && !arg.ends_with(".json") {
        return bundled(arg);
    }
    ExperimentConfig::load(path)
}

fn cmd_run(config: &str, seed: Option<u64>) -> Result<bool> {
    let mut config = load(config)?;
    if let Some(s) = seed {
        config.net.init.seed = s;
    }
    let out = run(&config)?;
    let s = &out.summary;
    println!("{}: {} steps, stop {}", s.name, s.steps, s.stop);
    println!(
        "final: t = {}, loss = {}, margin = {}, rho = {}",
        fmt_num(s.final_state.t),
        fmt_num(s.final_state.loss),
        fmt_num(s.final_state.margin),
        fmt_num(s.final_state.rho)
    );
    for a in &s.analyses {
        let verdict = if a.pass { "pass" } else { "FAIL" };
        match &a.error {
            Some(e) => println!("  {:<16} {verdict} ({e})", a.kind),
            None => println!("  {:<16} {verdict}", a.kind),
        }
    }
    println!("wrote {}", run_dir(&config).display());
    Ok(out.passed())
}

fn cmd_verify(suite: Suite) -> bool {
    let mut v = Verifier::new();
    let mut ok = true;
    for id in suite.criteria() {
        let report = v.run(id);
        println!("{}", report.line());
        ok &= report.passed();
    }
    ok
}

fn cmd_compare(a: &str, b: &str, metric: Metric) -> Result<()> {
    let c = compare(&load(a)?, &load(b)?, metric)?;
    println!("{} vs {} on {}: {} aligned points", c.a, c.b, metric.name(), c.points);
    println!(
        "divergence: initial {}, final {}, max {} ({})",
        fmt_num(c.initial_divergence),
        fmt_num(c.final_divergence),
        fmt_num(c.max_divergence),
        if c.diverges { "grows" } else { "does not grow" }
    );
    for (label, fits) in [(&c.a, &c.fits_a), (&c.b, &c.fits_b)] {
        for f in fits {
            if let Some(d) = &f.detail {
                println!("  {label}: {}", serde_json::to_string(d)?);
            }
        }
    }
    println!("wrote {}", c.write()?.display());
    Ok(())
}

fn cmd_gen_data(spec: &Path, output: &Path) -> Result<()> {
    let text = std::fs::read_to_string(spec).map_err(|e| CliError::io(spec, e))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let spec_value: DataSpec = serde_path_to_error::deserialize(de).map_err(|e| CliError::Config {
        file: spec.display().to_string(),
        field: e.path().to_string(),
        message: e.into_inner().to_string(),
    })?;
    let data = build_dataset(&spec_value)?;
    let mut buf = Vec::new();
    write_csv(&data, &mut buf)?;
    std::fs::write(output, buf).map_err(|e| CliError::io(output, e))?;
    println!("wrote {} samples to {}", data.len(), output.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, seed } => cmd_run(&config, seed),
        Command::Verify { suite } => Ok(cmd_verify(suite)),
        Command::Compare { a, b, metric } => cmd_compare(&a, &b, metric).map(|_| true),
        Command::GenData { spec, output } => cmd_gen_data(&spec, &output).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
