//! Command-line driver.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Parser, ValueEnum};
use isacnet_core::channel::RxBlock;
use isacnet_core::config::{reference_scenario, FusionMethod, RoiModel};
use isacnet_core::montecarlo::{run_campaign, run_trial, station_label, CampaignMetrics, RunOptions, StageSelection};
use isacnet_core::Scenario;

use crate::export::{metrics_rows, write_likelihood_csv, write_metrics_csv, write_range_angle_csv, write_summary, Summary};
use crate::files::{load_scenario, save_scenario, write_rx_block};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    All,
}

impl From<StageArg> for StageSelection {
    fn from(s: StageArg) -> Self {
        match s {
            StageArg::One => StageSelection::Coarse,
            StageArg::Two => StageSelection::Refined,
            StageArg::All => StageSelection::All,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FusionArg {
    Simple,
    Weighted,
    Wls,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RoiArg {
    Coarse,
    Gaussian,
}

/// Monte Carlo campaigns of two-stage cooperative ISAC sensing.
#[derive(Debug, Parser)]
#[command(name = "isacnet", version)]
pub struct Args {
    /// Scenario document (JSON). Defaults to the built-in reference scenario.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Stages to run: 1 (coarse), 2 (refined, RoI drawn around the truth) or all.
    #[arg(long, value_enum, default_value = "all")]
    pub stage: StageArg,
    /// Monte Carlo trials per trajectory point.
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Coarse fusion methods to report; a single method also centres the RoI.
    #[arg(long, value_enum, default_value = "all")]
    pub fusion: FusionArg,
    /// Stage-2 bandwidth fraction.
    #[arg(long = "rho-f")]
    pub rho_f: Option<f64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Also write range-angle maps, likelihood maps and Stage-2 blocks of
    /// trial 0 at every point.
    #[arg(long)]
    pub dump_maps: bool,
    /// Shrinks K, K_p and the Stage-2 grid density by this factor.
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long = "roi-model", value_enum)]
    pub roi_model: Option<RoiArg>,
}

/// Applies command-line overrides to a scenario and revalidates it.
pub fn effective_scenario(args: &Args) -> anyhow::Result<Scenario> {
    let mut s = match &args.config {
        Some(p) => load_scenario(p)?,
        None => reference_scenario(),
    };
    if let Some(f) = args.scale {
        s = s.scaled(f)?;
    }
    if let Some(r) = args.rho_f {
        s = s.with_stage2_bandwidth(r)?;
    }
    if let Some(t) = args.trials {
        s.sim.trials = t;
    }
    if let Some(seed) = args.seed {
        s.sim.seed = seed;
    }
    match args.fusion {
        FusionArg::Simple => s.sim.fusion = FusionMethod::Simple,
        FusionArg::Weighted => s.sim.fusion = FusionMethod::Weighted,
        FusionArg::Wls => s.sim.fusion = FusionMethod::Wls,
        FusionArg::All => {}
    }
    if let Some(m) = args.roi_model {
        s.sim.roi_model = match m {
            RoiArg::Coarse => RoiModel::Coarse,
            RoiArg::Gaussian => RoiModel::Gaussian,
        };
    }
    Ok(Scenario::from_doc(&s.to_doc())?)
}

/// Method labels written to the metrics CSV.
pub fn reported_methods(args: &Args, n_bs: usize) -> Vec<String> {
    let mut out = Vec::new();
    if args.stage != StageArg::Two {
        out.extend((0..n_bs).map(station_label));
        out.push("single".into());
        let fusion: Vec<FusionMethod> = match args.fusion {
            FusionArg::Simple => vec![FusionMethod::Simple],
            FusionArg::Weighted => vec![FusionMethod::Weighted],
            FusionArg::Wls => vec![FusionMethod::Wls],
            FusionArg::All => FusionMethod::ALL.to_vec(),
        };
        out.extend(fusion.iter().map(|m| m.name().to_string()));
    }
    if args.stage != StageArg::One {
        out.push("refined".into());
    }
    out
}

fn dump_maps(scenario: &Scenario, stages: StageSelection, dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let options = RunOptions { stages, keep_artifacts: true };
    for point in 0..scenario.sim.trajectory.len() {
        let (_, art) = run_trial(scenario, point, 0, &options)?;
        let Some(art) = art else { continue };
        let tag = format!("point{point}_trial0");
        for (i, m) in art.range_angle.iter().enumerate() {
            write_range_angle_csv(&dir.join(format!("{tag}_{}_range_angle.csv", station_label(i))), m)?;
        }
        if let Some(l) = &art.likelihood {
            for (i, values) in l.per_bs.iter().enumerate() {
                write_likelihood_csv(&dir.join(format!("{tag}_{}_likelihood.csv", station_label(i))), l, values)?;
            }
            write_likelihood_csv(&dir.join(format!("{tag}_fused_likelihood.csv")), l, &l.fused)?;
        }
        for (i, rx) in art.stage2_rx.iter().enumerate() {
            let path = dir.join(format!("{tag}_{}_stage2.bin", station_label(i)));
            let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
            write_rx_block(&RxBlock::Stage2(rx.clone()), BufWriter::new(f))?;
        }
    }
    Ok(())
}

fn print_summary(metrics: &CampaignMetrics, methods: &[String]) {
    for p in &metrics.points {
        println!(
            "point ({:.1}, {:.1}) m: Pd cooperative {:.3}, single [{}]",
            p.point.x,
            p.point.y,
            p.pd_cooperative,
            p.pd_single.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(", ")
        );
    }
    for (name, v) in &metrics.mean_rmse_m {
        if methods.contains(name) {
            println!("mean RMSE {name}: {v:.4} m");
        }
    }
}

pub fn run(args: &Args) -> anyhow::Result<()> {
    let scenario = effective_scenario(args)?;
    let stages = StageSelection::from(args.stage);
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    save_scenario(&scenario, &args.out.join("scenario.json"))?;
    let (_, metrics) = run_campaign(&scenario, stages)?;
    let methods = reported_methods(args, scenario.stations.len());
    write_metrics_csv(&args.out.join("metrics.csv"), &metrics_rows(&metrics, &methods))?;
    write_summary(
        &args.out.join("summary.json"),
        &Summary { scenario: scenario.to_doc(), stages, metrics: metrics.clone() },
    )?;
    if args.dump_maps {
        dump_maps(&scenario, stages, &args.out.join("maps"))?;
    }
    print_summary(&metrics, &methods);
    Ok(())
}
