use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use bcast::data::{self, Subset, TestSplit, TrainSplit};
use bcast::pipeline::{
    build_model, count_params, directional_checks, forecast_with_pis, run_comparison, score, write_plot_data,
    ComparisonReport, ModelConfig, ModelId, ReportRow,
};
use bcast::serialize::{load_model, save_model};
use bcast::synth::{self, SynthKind};
use bcast::tensor::RngState;
use bcast::train::{grid_search, rank, SearchSpace, TrainConfig};

#[derive(Parser)]
#[command(name = "bcast", version, about = "Probabilistic half-hourly solar forecasting")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and save it with its training history.
    Train {
        #[arg(long, default_value = "m1")]
        model: ModelId,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Forecast the test split with a saved model and write plot data.
    Forecast(ForecastArgs),
    /// Score a saved model on the test split.
    Evaluate(ForecastArgs),
    /// Train and score several models on one split.
    Compare {
        /// Comma-separated model ids; all eight by default.
        #[arg(long, value_delimiter = ',')]
        models: Vec<ModelId>,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        /// Repeat with seeds seed, seed+1, ... and check M1 against M2 on medians.
        #[arg(long, default_value_t = 1)]
        repeats: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Grid search over a JSON search space, scored by validation loss.
    Gridsearch {
        #[arg(long, default_value = "m1")]
        model: ModelId,
        /// JSON file with candidate lists for lr, neurons, batch_size, dropout, latent_dims.
        #[arg(long)]
        space: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Convert one customer's channel from the wide Ausgrid layout to timestamp,kwh.
    ConvertAusgrid {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        customer: u32,
        #[arg(long, default_value = "GG")]
        channel: String,
        /// Output CSV file.
        #[arg(long)]
        out: PathBuf,
        /// Keep the raw readings without gap cleaning.
        #[arg(long)]
        raw: bool,
    },
}

#[derive(Args)]
struct ForecastArgs {
    /// Path stem of a saved model (without .bin/.json).
    #[arg(long)]
    model_file: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    mc_samples: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct DataArgs {
    /// Long CSV with header timestamp,kwh.
    #[arg(long, conflicts_with = "synthetic")]
    data: Option<PathBuf>,
    /// Generated series instead of a file: sine, noisy-sine, hetero or solar.
    #[arg(long)]
    synthetic: Option<SynthKind>,
    /// Length of the generated series in half-hour steps.
    #[arg(long, default_value_t = 48 * 120)]
    length: usize,
    #[arg(long, default_value_t = 0.8)]
    ratio: f64,
    #[arg(long, default_value = "full")]
    subset: Subset,
}

#[derive(Args)]
struct TrainArgs {
    /// JSON file with training settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    lags: Option<usize>,
    #[arg(long)]
    latent: Option<usize>,
    #[arg(long)]
    neurons: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    mc_samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl TrainArgs {
    fn resolve(&self) -> bcast::Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| bcast::Error::config(format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text)?
            }
            None => TrainConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {$(
                if let Some(v) = self.$flag { cfg.$field = v; }
            )*};
        }
        set!(lags => lags, latent => latent_dims, neurons => neurons, epochs => epochs, batch => batch_size,
             lr => lr, patience => patience, dropout => dropout, mc_samples => mc_samples, seed => seed);
        cfg.validate()?;
        Ok(cfg)
    }
}

impl DataArgs {
    fn name(&self) -> String {
        match (&self.data, self.synthetic) {
            (Some(p), _) => p.file_stem().map_or("data".into(), |s| s.to_string_lossy().into_owned()),
            (None, Some(k)) => match k {
                SynthKind::Sine => "sine",
                SynthKind::NoisySine => "noisy-sine",
                SynthKind::Heteroscedastic => "hetero",
                SynthKind::Solar => "solar",
            }
            .into(),
            (None, None) => "solar".into(),
        }
    }

    /// Reads or generates the series and splits it. Files are gap-cleaned
    /// first; without `--data` or `--synthetic` a synthetic solar series is used.
    fn load(&self, lags: usize, seed: u64) -> bcast::Result<(TrainSplit, TestSplit)> {
        let records = match &self.data {
            Some(p) => {
                let raw = data::load_long_csv(p)?;
                let (clean, dropped) = data::clean_series(&raw)?;
                if !dropped.is_empty() {
                    eprintln!("dropped {} days with gaps", dropped.len());
                }
                clean
            }
            None => synth::generate(self.synthetic.unwrap_or(SynthKind::Solar), self.length, seed).records(),
        };
        data::prepare(&records, lags, self.ratio, self.subset)
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn print_row(r: &ReportRow) {
    match (&r.scores, &r.error) {
        (Some(s), _) => println!(
            "{:<3} rmse {:.4}  mae {:.4}  r {:.4}  pinball {:.4}  winkler {:.4}  weights {} (+{} vae)  {:.1}s",
            r.model, s.rmse, s.mae, s.r, s.pinball_avg, s.winkler, r.weight_count, r.vae_weight_count, r.train_seconds
        ),
        (None, e) => println!("{:<3} failed: {}", r.model, e.as_deref().unwrap_or("unknown")),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Command::Train { model, data, train, out } => {
            let tc = train.resolve()?;
            let (tr, _) = data.load(tc.lags, tc.seed)?;
            let mut rng = RngState::new(tc.seed);
            let mut m = build_model(&ModelConfig::new(model, &tc), &tc, &mut rng)?;
            let hist = m.fit(&tr, &mut rng)?;
            create_dir(&out)?;
            for (k, h) in hist.iter().enumerate() {
                let name = if hist.len() == 2 && k == 0 { "history_vae.csv" } else { "history.csv" };
                h.save_csv(out.join(name))?;
            }
            let stem = out.join(format!("model_{model}"));
            save_model(&m, &stem)?;
            let last = hist.last().expect("at least one stage");
            println!(
                "{model}: best val loss {:.6} at epoch {} of {}; saved {}",
                last.best_val_loss(),
                last.best_epoch,
                last.train_loss.len(),
                stem.display()
            );
        }
        Command::Forecast(args) => predict(args, false)?,
        Command::Evaluate(args) => predict(args, true)?,
        Command::Compare { models, data, train, repeats, out } => {
            let tc = train.resolve()?;
            if repeats == 0 {
                bail!(bcast::Error::config("--repeats must be at least 1"));
            }
            let ids = if models.is_empty() { ModelId::ALL.to_vec() } else { models };
            let cfgs: Vec<ModelConfig> = ids.iter().map(|&id| ModelConfig::new(id, &tc)).collect();
            let mut reports = Vec::new();
            for k in 0..repeats {
                let tc = TrainConfig { seed: tc.seed + k, ..tc.clone() };
                let (tr, te) = data.load(tc.lags, tc.seed)?;
                let rep = run_comparison(&cfgs, &tr, &te, &tc, &data.name());
                let dir = if repeats == 1 { out.clone() } else { out.join(format!("seed_{}", tc.seed)) };
                rep.save(&dir)?;
                if repeats > 1 {
                    println!("seed {}", tc.seed);
                }
                rep.rows.iter().for_each(print_row);
                reports.push(rep);
            }
            if repeats > 1 {
                for (what, ok) in directional_checks(&reports) {
                    println!("{} {what}", if ok { "holds " } else { "FAILS " });
                }
            }
            println!("metrics written to {}", out.display());
        }
        Command::Gridsearch { model, space, data, train, out } => {
            let tc = train.resolve()?;
            let text = std::fs::read_to_string(&space)
                .map_err(|e| bcast::Error::config(format!("{}: {e}", space.display())))?;
            let space: SearchSpace = serde_json::from_str(&text).map_err(bcast::Error::from)?;
            let (tr, _) = data.load(tc.lags, tc.seed)?;
            let eval = |c: &TrainConfig| -> bcast::Result<(f64, usize)> {
                let mut rng = RngState::new(c.seed);
                let mut m = build_model(&ModelConfig::new(model, c), c, &mut rng)?;
                let hist = m.fit(&tr, &mut rng)?;
                let p = count_params(&m);
                Ok((hist.last().expect("one stage").best_val_loss(), p.total))
            };
            let (best, rows) = grid_search(&space, &tc, &eval)?;
            create_dir(&out)?;
            let mut w = csv::Writer::from_path(out.join("grid.csv"))?;
            w.write_record(["rank", "lr", "neurons", "batch_size", "dropout", "latent_dims", "params", "score", "status"])?;
            for (r, &i) in rank(&rows).iter().enumerate() {
                let g = &rows[i];
                w.write_record([
                    (r + 1).to_string(),
                    g.config.lr.to_string(),
                    g.config.neurons.to_string(),
                    g.config.batch_size.to_string(),
                    g.config.dropout.to_string(),
                    g.config.latent_dims.to_string(),
                    g.params.to_string(),
                    format!("{:.6}", g.score),
                    g.error.clone().unwrap_or_else(|| "ok".into()),
                ])?;
            }
            w.flush()?;
            std::fs::write(out.join("best_config.json"), serde_json::to_string_pretty(&best)?)?;
            println!(
                "best: lr {} neurons {} batch {} dropout {} latent {}",
                best.lr, best.neurons, best.batch_size, best.dropout, best.latent_dims
            );
        }
        Command::ConvertAusgrid { input, customer, channel, out, raw } => {
            let recs = data::ausgrid_wide_to_long(&input, customer, &channel)?;
            let recs = if raw {
                recs
            } else {
                let (clean, dropped) = data::clean_series(&recs)?;
                if !dropped.is_empty() {
                    eprintln!("dropped {} days with gaps", dropped.len());
                }
                clean
            };
            data::write_long_csv(&out, &recs)?;
            println!("wrote {} readings to {}", recs.len(), out.display());
        }
    }
    Ok(())
}

fn predict(args: ForecastArgs, evaluate: bool) -> Result<()> {
    let m = load_model(&args.model_file)?;
    let (_, test) = args.data.load(m.config.lags, m.train.seed)?;
    let mut rng = RngState::new(args.seed);
    let samples = args.mc_samples.unwrap_or(m.train.mc_samples);
    let fc = forecast_with_pis(&m, &test.0.x, samples, &mut rng, &[0.5, 0.9])?;
    let y = test.0.y_original();
    create_dir(&args.out)?;
    if evaluate {
        let pc = count_params(&m);
        let row = ReportRow {
            model: m.id(),
            scores: Some(score(&fc, &y)?),
            weight_count: pc.forecaster,
            vae_weight_count: pc.vae,
            train_seconds: 0.0,
            error: None,
        };
        print_row(&row);
        let rep = ComparisonReport {
            dataset: args.data.name(),
            rows: vec![row],
        };
        rep.write_metrics_csv(File::create(args.out.join("metrics.csv"))?)?;
    } else {
        let path = args.out.join("forecast.csv");
        write_plot_data(&fc, &y, File::create(&path)?)?;
        println!("wrote {} steps to {}", fc.len(), path.display());
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain()
        .find_map(|e| e.downcast_ref::<bcast::Error>())
        .map_or(1, |e| e.exit_code() as u8)
}

fn main() -> ExitCode {
    // bad flags or values are configuration errors; help and version are not errors
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(3) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
