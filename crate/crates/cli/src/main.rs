use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use commflow::campaign::{
    emit_report, run_campaign, strip_label, write_report, CampaignConfig, Format, Statement,
};
use commflow::Error;

/// Run a verification campaign for one statement and write a report.
///
/// Exit status: 0 pass, 1 fail, 2 configuration error, 3 numeric breakdown
/// on more than 20% of the points.
#[derive(Debug, Parser)]
#[command(name = "verify", version)]
struct Cli {
    /// theorem1, theorem10, lemma6, lemma7, lemma8, lemma9, prop11,
    /// cor12-first or cor12-second
    statement: String,

    /// TOML campaign file
    #[arg(long)]
    config: Option<PathBuf>,

    /// Bracket word, e.g. "[[1,2],3]"
    #[arg(long)]
    bracket: Option<String>,

    /// Vector field components, e.g. "0, x1" or "X2=0, x1"; repeat per slot
    #[arg(long = "field")]
    fields: Vec<String>,

    /// Section, e.g. "type=(0,1); a_1 = x2"
    #[arg(long)]
    section: Option<String>,

    /// Leading order of each curve; repeat per field
    #[arg(long = "order")]
    orders: Vec<u32>,

    #[arg(long)]
    dim: Option<usize>,

    #[arg(long)]
    algebra: Option<String>,

    #[arg(long)]
    points: Option<usize>,

    #[arg(long)]
    seed: Option<u64>,

    #[arg(long)]
    h0: Option<f64>,

    #[arg(long)]
    levels: Option<usize>,

    #[arg(long)]
    match_tol: Option<f64>,

    #[arg(long)]
    vanish_tol: Option<f64>,

    #[arg(long)]
    abs_tol: Option<f64>,

    #[arg(long)]
    rel_tol: Option<f64>,

    #[arg(long)]
    t_max: Option<f64>,

    /// Integrate every flow numerically
    #[arg(long)]
    no_closed_form: bool,

    /// json or csv
    #[arg(long, default_value = "json")]
    format: String,

    /// Report file; stdout when absent
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Cli {
    fn config(&self) -> Result<CampaignConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => CampaignConfig::load(path)?,
            None => CampaignConfig::default(),
        };
        cfg.statement = Some(self.statement.parse::<Statement>()?);
        if !self.fields.is_empty() {
            cfg.fields = self
                .fields
                .iter()
                .map(|f| strip_label(f).to_string())
                .collect();
        }
        if !self.orders.is_empty() {
            cfg.orders = self.orders.clone();
        }
        macro_rules! set {
            ($($name:ident),*) => {
                $(if let Some(v) = &self.$name {
                    cfg.$name = Some(v.clone());
                })*
            };
        }
        set!(bracket, section, dim, algebra, points, seed, h0, levels);
        set!(match_tol, vanish_tol, abs_tol, rel_tol, t_max);
        if self.no_closed_form {
            cfg.closed_form = Some(false);
        }
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = || -> Result<i32, Error> {
        let format: Format = cli.format.parse()?;
        let cfg = cli.config()?;
        let report = run_campaign(&cfg)?;
        match &cli.out {
            Some(path) => emit_report(&report, path, format)?,
            None => write_report(&report, std::io::stdout().lock(), format)?,
        }
        eprintln!("{}", report.summary());
        Ok(report.exit_code())
    };
    match run() {
        Ok(code) => ExitCode::from(code as u8),
        Err(e @ Error::Config(_)) => {
            eprintln!("verify: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("verify: {e}");
            ExitCode::from(1)
        }
    }
}
