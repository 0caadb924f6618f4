use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nearfield_irs::experiments::{self, load_scenario};
use nearfield_irs::{DesignKind, ResultTable, Scenario};

/// Wideband near-field IRS beamforming experiments.
#[derive(Debug, Parser)]
#[command(name = "nfirs", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Normalized array gain per subcarrier.
    GainProfile(Common),
    /// Gain over a horizontal plane at selected frequencies.
    BeamPattern(Common),
    /// DLDD edge gain versus number of delay modules.
    TdCountSweep(Common),
    /// Edge gain versus maximum module delay.
    DelayRangeSweep(Common),
    /// Achievable rate versus transmit power.
    RateSweep(Common),
    /// Beamformer configuration as JSON.
    ExportConfig(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// Scenario file; the built-in default scenario when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,

    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Comma-separated designs: narrowband, dldd, per-element.
    #[arg(long, value_delimiter = ',')]
    designs: Option<Vec<DesignKind>>,

    /// Output format [default: csv].
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl Common {
    fn scenario(&self) -> Result<Scenario> {
        match &self.scenario {
            Some(p) => {
                load_scenario(p).with_context(|| format!("loading scenario {}", p.display()))
            }
            None => Ok(Scenario::default()),
        }
    }

    fn designs(&self) -> Vec<DesignKind> {
        self.designs
            .clone()
            .unwrap_or_else(|| DesignKind::ALL.to_vec())
    }

    fn single_design(&self, command: &str) -> Result<DesignKind> {
        match self.designs.as_deref() {
            None => Ok(DesignKind::Dldd),
            Some([one]) => Ok(*one),
            Some(_) => bail!("{command} takes exactly one design"),
        }
    }

    fn sink(&self) -> Result<Box<dyn Write>> {
        Ok(match &self.out {
            Some(p) => Box::new(BufWriter::new(
                File::create(p).with_context(|| format!("creating {}", p.display()))?,
            )),
            None => Box::new(io::stdout().lock()),
        })
    }

    fn emit(&self, table: &ResultTable) -> Result<()> {
        let mut out = self.sink()?;
        match self.format.unwrap_or(Format::Csv) {
            Format::Csv => table.write_csv(&mut out)?,
            Format::Json => writeln!(out, "{}", table.to_json_string()?)?,
        }
        out.flush()?;
        Ok(())
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GainProfile(c) => {
            let table = experiments::run_gain_profile(&c.scenario()?, &c.designs())?;
            c.emit(&table)
        }
        Command::BeamPattern(c) => {
            let kind = c.single_design("beam-pattern")?;
            let table = experiments::run_beam_pattern(&c.scenario()?, kind)?;
            c.emit(&table)
        }
        Command::TdCountSweep(c) => c.emit(&experiments::run_td_count_sweep(&c.scenario()?)?),
        Command::DelayRangeSweep(c) => c.emit(&experiments::run_delay_range_sweep(&c.scenario()?)?),
        Command::RateSweep(c) => {
            let table = experiments::run_rate_sweep(&c.scenario()?, &c.designs())?;
            c.emit(&table)
        }
        Command::ExportConfig(c) => {
            if c.format == Some(Format::Csv) {
                bail!("export-config only writes JSON");
            }
            let kind = c.single_design("export-config")?;
            let json = experiments::export_config(&c.scenario()?, kind)?;
            let mut out = c.sink()?;
            writeln!(out, "{json}")?;
            out.flush()?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "irs.n_y = 20\nirs.n_z = 20\npartition.k_y = 4\npartition.k_z = 4\n\
                         grid.subcarriers = 8\nsweep.partitions = 1, 2, 4\npattern.nx = 5\npattern.ny = 5\n";

    fn run_args(args: &[&str]) -> Result<()> {
        run(Cli::try_parse_from(
            std::iter::once("nfirs").chain(args.iter().copied()),
        )?)
    }

    #[test]
    fn subcommands_write_their_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let scn = dir.path().join("s.scn");
        std::fs::write(&scn, SMALL).unwrap();
        let scn = scn.to_str().unwrap();
        for cmd in [
            "gain-profile",
            "beam-pattern",
            "td-count-sweep",
            "delay-range-sweep",
            "rate-sweep",
        ] {
            for format in ["csv", "json"] {
                let out = dir.path().join(format!("{cmd}.{format}"));
                run_args(&[
                    cmd,
                    "--scenario",
                    scn,
                    "--format",
                    format,
                    "--out",
                    out.to_str().unwrap(),
                ])
                .unwrap();
                let text = std::fs::read_to_string(&out).unwrap();
                match format {
                    "csv" => assert!(text.starts_with(&format!("# experiment: {cmd}\n"))),
                    _ => assert!(text.contains(&format!("\"experiment\": \"{cmd}\""))),
                }
            }
        }
        let out = dir.path().join("cfg.json");
        run_args(&[
            "export-config",
            "--scenario",
            scn,
            "--out",
            out.to_str().unwrap(),
        ])
        .unwrap();
        assert!(std::fs::read_to_string(out)
            .unwrap()
            .contains("\"kind\": \"dldd\""));
    }

    #[test]
    fn bad_input_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let scn = dir.path().join("bad.scn");
        std::fs::write(&scn, "irs.n_y = 20\nirs.n_z = ten\n").unwrap();
        let err = run_args(&["gain-profile", "--scenario", scn.to_str().unwrap()]).unwrap_err();
        assert!(format!("{err:#}").contains("line 2"), "{err:#}");
        assert!(run_args(&["beam-pattern", "--designs", "dldd,per-element"]).is_err());
        assert!(run_args(&["export-config", "--format", "csv"]).is_err());
        assert!(run_args(&["rate-sweep", "--designs", "optimal"]).is_err());
    }

    #[test]
    fn design_selection() {
        let c = Cli::try_parse_from([
            "nfirs",
            "gain-profile",
            "--designs",
            "per-element,narrowband",
        ])
        .unwrap();
        let Command::GainProfile(c) = c.command else {
            unreachable!()
        };
        assert_eq!(
            c.designs(),
            [DesignKind::PerElement, DesignKind::Narrowband]
        );
        let c = Cli::try_parse_from(["nfirs", "beam-pattern"]).unwrap();
        let Command::BeamPattern(c) = c.command else {
            unreachable!()
        };
        assert_eq!(c.single_design("beam-pattern").unwrap(), DesignKind::Dldd);
        assert_eq!(c.designs(), DesignKind::ALL);
    }
}
