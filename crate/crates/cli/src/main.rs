//! `evplab`: file-based stages from network config to comparison report.

mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use evplab::eval::{bench_realtime, compare_strategies, compute_metrics, render_report, run_scenario_with};
use evplab::learn::data::{anchor_s, ENTRY_STEP_S, SEEDS};
use evplab::learn::train::LabelSet;
use evplab::learn::{
    dataset_csv, load_corridor, save_corridor, Curve, RegressorKind, ScenarioDescriptor, TrainConfig,
};
use evplab::net::{default_config, load_config, to_config_json, Config};
use evplab::par::with_jobs;
use evplab::pipeline::{
    select_intersection, selection_table, train_intersection, Campaign, IntersectionCandidates,
    Selection, SPLIT_SEED,
};
use evplab::strategies::{
    ideal_call_search, optimal_call_search, CallSchedule, DpPolicy, Strategy, StrategyKind, IDEAL_MARGIN_S,
};
use evplab::{Error, Result};
use manifest::{read_json, write_file, write_json, Manifest};

const DEFAULT_SEED: u64 = 7;

#[derive(Parser)]
#[command(name = "evplab", version, about = "Emergency vehicle preemption lab")]
struct Cli {
    /// Worker threads for parallel stages; defaults to all cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write the default testbed configuration.
    GenNet {
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Run one scenario under one strategy.
    Simulate(SimulateArgs),
    /// Optimal and ideal call schedules for a set of scenarios.
    Optimal(OptimalArgs),
    /// Search the training campaign and export per-intersection datasets.
    GenData(GenDataArgs),
    /// Train and score candidate models for every modelled intersection.
    Train(TrainArgs),
    /// Pick the final model per intersection.
    Select(SelectArgs),
    /// Run every strategy on the test scenarios and write the report.
    Compare(CompareArgs),
    /// Real-time factor and inference latency.
    Bench(BenchArgs),
}

#[derive(Args)]
struct NetArg {
    /// Network configuration; the built-in testbed when omitted.
    #[arg(long)]
    net: Option<PathBuf>,
}

impl NetArg {
    fn load(&self) -> Result<Config> {
        match &self.net {
            Some(p) => load_config(&std::fs::read_to_string(p).map_err(evplab::error::io_err(p))?),
            None => Ok(default_config()),
        }
    }

    fn inputs(&self) -> Vec<PathBuf> {
        self.net.iter().cloned().collect()
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    net: NetArg,
    #[arg(long, env = "EVPLAB_SEED", default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// ERV entry second.
    #[arg(long)]
    entry: i64,
    /// noevp, cico, dp, optimal, ideal or mlevp.
    #[arg(long)]
    strategy: String,
    /// Corridor policy for mlevp.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Output directory.
    #[arg(short, long, default_value = "run")]
    out: PathBuf,
}

#[derive(Args)]
struct ScenarioSet {
    /// Random seeds; the five campaign seeds when omitted.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Number of entry offsets, 5 s apart from the anchor second.
    #[arg(long, default_value_t = 32)]
    offsets: i64,
}

impl ScenarioSet {
    fn descriptors(&self, cfg: &Config) -> Vec<ScenarioDescriptor> {
        let seeds = if self.seeds.is_empty() { SEEDS.to_vec() } else { self.seeds.clone() };
        let a = anchor_s(&cfg.demand);
        seeds
            .iter()
            .flat_map(|&seed| {
                (0..self.offsets).map(move |k| ScenarioDescriptor {
                    seed,
                    entry_s: a + k * ENTRY_STEP_S,
                    offset_s: k * ENTRY_STEP_S,
                })
            })
            .collect()
    }
}

#[derive(Args)]
struct OptimalArgs {
    #[command(flatten)]
    net: NetArg,
    #[command(flatten)]
    set: ScenarioSet,
    #[arg(short, long, default_value = "schedules.json")]
    out: PathBuf,
}

#[derive(Args)]
struct GenDataArgs {
    #[command(flatten)]
    net: NetArg,
    #[command(flatten)]
    set: ScenarioSet,
    /// Seed of the train/validation/test split.
    #[arg(long, env = "EVPLAB_SEED", default_value_t = SPLIT_SEED)]
    seed: u64,
    /// Skip the per-intersection CSV export.
    #[arg(long)]
    no_csv: bool,
    /// Label curve of the exported CSVs.
    #[arg(long, default_value = "linear")]
    curve: String,
    /// Label ceiling of not-needed scenarios in the exported CSVs.
    #[arg(long, default_value_t = 0.95)]
    no_pr_thres: f64,
    #[arg(short, long, default_value = "data")]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory written by gen-data.
    #[arg(long, default_value = "data")]
    data: PathBuf,
    #[arg(long, env = "EVPLAB_SEED", default_value_t = TrainConfig::default().seed)]
    seed: u64,
    /// MLP epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Regressor families: linear, mlp.
    #[arg(long, value_delimiter = ',', default_value = "linear,mlp")]
    regressors: Vec<String>,
    #[arg(short, long, default_value = "candidates")]
    out: PathBuf,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long, default_value = "data")]
    data: PathBuf,
    #[arg(long, default_value = "candidates")]
    candidates: PathBuf,
    #[arg(short, long, default_value = "models")]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long, default_value = "data")]
    data: PathBuf,
    /// Corridor policy from select.
    #[arg(long, default_value = "models/corridor.json")]
    model: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "noevp,cico,dp,optimal,ideal,mlevp")]
    strategies: Vec<String>,
    #[arg(short, long, default_value = "report")]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    net: NetArg,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, env = "EVPLAB_SEED", default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    entry: Option<i64>,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

fn parse_strategy(s: &str) -> Result<StrategyKind> {
    StrategyKind::parse(s).ok_or_else(|| Error::Policy(format!("unknown strategy `{s}`")))
}

fn load_campaign(dir: &Path) -> Result<Campaign> {
    read_json(&dir.join("campaign.json"))
}

fn gen_net(out: &Path) -> Result<()> {
    write_file(out, to_config_json(&default_config()).as_bytes())?;
    let mut m = Manifest::new("gen-net", vec![], None);
    m.add(out)?;
    m.write_beside(out)
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let cfg = a.net.load()?;
    let kind = parse_strategy(&a.strategy)?;
    let desc = ScenarioDescriptor {
        seed: a.seed,
        entry_s: a.entry,
        offset_s: 0,
    };
    let mut inputs = a.net.inputs();
    let corridor = match (&a.model, kind) {
        (Some(p), _) => {
            inputs.push(p.clone());
            Some(load_corridor(p)?)
        }
        (None, StrategyKind::Mlevp) => return Err(Error::Policy("mlevp needs --model".into())),
        _ => None,
    };
    let strategy = match kind {
        StrategyKind::NoEvp => Strategy::NoEvp,
        StrategyKind::Cico => Strategy::Cico,
        StrategyKind::Dp => Strategy::Dp(DpPolicy::default()),
        StrategyKind::Optimal => Strategy::Schedule(optimal_call_search(&cfg.network, &cfg.demand, a.seed, a.entry)?),
        StrategyKind::Ideal => Strategy::Schedule(ideal_call_search(
            &cfg.network,
            &cfg.demand,
            a.seed,
            a.entry,
            IDEAL_MARGIN_S,
        )?),
        StrategyKind::Mlevp => Strategy::Mlevp(corridor.as_ref().expect("checked above")),
    };
    let net = std::sync::Arc::new(cfg.network.clone());
    let mut policy = strategy.policy(&net)?;
    let r = run_scenario_with(&net, &cfg.demand, &desc, &mut *policy)?;
    let metrics = compute_metrics(&r, &net)?;
    std::fs::create_dir_all(&a.out).map_err(evplab::error::io_err(&a.out))?;
    let mut m = Manifest::new("simulate", inputs, Some(a.seed));
    let files = [
        ("run.json", serde_json::to_vec_pretty(&r)?),
        ("metrics.json", serde_json::to_vec_pretty(&metrics)?),
        ("trajectory.csv", r.trajectory_csv().into_bytes()),
        ("events.jsonl", r.event_log.to_jsonl().into_bytes()),
    ];
    for (name, body) in files {
        let p = a.out.join(name);
        write_file(&p, &body)?;
        m.add(&p)?;
    }
    m.write_in(&a.out)?;
    println!(
        "{} seed {} entry {}: travel {:.1} s, {:.2} mph, preempt {:.1} s",
        kind.label(),
        a.seed,
        a.entry,
        metrics.erv_travel_time_s,
        metrics.erv_avg_speed_mph,
        metrics.aggregate_preempt_s
    );
    Ok(())
}

#[derive(serde::Serialize)]
struct ScheduleEntry {
    id: String,
    seed: u64,
    entry_s: i64,
    optimal: CallSchedule,
    ideal: CallSchedule,
}

fn optimal(a: &OptimalArgs) -> Result<()> {
    let cfg = a.net.load()?;
    let descs = a.set.descriptors(&cfg);
    let runs = evplab::learn::generate_runs_for(&cfg.network, &cfg.demand, &descs)?;
    let out: Vec<ScheduleEntry> = runs
        .iter()
        .map(|r| ScheduleEntry {
            id: r.desc.id(),
            seed: r.desc.seed,
            entry_s: r.desc.entry_s,
            optimal: r.search.optimal.clone(),
            ideal: r.search.ideal.clone(),
        })
        .collect();
    write_json(&a.out, &out)?;
    let mut m = Manifest::new("optimal", a.net.inputs(), None);
    m.add(&a.out)?;
    m.write_beside(&a.out)?;
    println!("{} scenarios -> {}", out.len(), a.out.display());
    Ok(())
}

fn parse_curve(s: &str) -> Result<Curve> {
    Curve::ALL
        .into_iter()
        .find(|c| c.name().eq_ignore_ascii_case(s) || format!("{c:?}").eq_ignore_ascii_case(s))
        .ok_or_else(|| Error::Learn(format!("unknown curve `{s}`")))
}

#[derive(serde::Serialize)]
struct ScenarioEntry {
    id: String,
    seed: u64,
    entry_s: i64,
    offset_s: i64,
    subset: &'static str,
    needed: Vec<String>,
}

fn gen_data(a: &GenDataArgs) -> Result<()> {
    let cfg = a.net.load()?;
    let ls = LabelSet {
        curve: parse_curve(&a.curve)?,
        no_pr_thres: a.no_pr_thres,
    };
    let descs = a.set.descriptors(&cfg);
    let camp = Campaign::generate_for(&cfg.network, &cfg.demand, &descs, a.seed)?;
    std::fs::create_dir_all(&a.out).map_err(evplab::error::io_err(&a.out))?;
    let mut m = Manifest::new("gen-data", a.net.inputs(), Some(a.seed));
    let p = a.out.join("campaign.json");
    write_json(&p, &camp)?;
    m.add(&p)?;
    let p = a.out.join("config.json");
    write_file(&p, to_config_json(&cfg).as_bytes())?;
    m.add(&p)?;
    let subset = |k: usize| {
        if camp.split.train.contains(&k) {
            "train"
        } else if camp.split.validation.contains(&k) {
            "validation"
        } else {
            "test"
        }
    };
    let entries: Vec<ScenarioEntry> = camp
        .runs
        .iter()
        .enumerate()
        .map(|(k, r)| ScenarioEntry {
            id: r.desc.id(),
            seed: r.desc.seed,
            entry_s: r.desc.entry_s,
            offset_s: r.desc.offset_s,
            subset: subset(k),
            needed: camp
                .modelled
                .iter()
                .filter(|&&i| r.search.needed(i))
                .map(|&i| cfg.network.intersections[i].id.clone())
                .collect(),
        })
        .collect();
    let p = a.out.join("scenarios.json");
    write_json(&p, &entries)?;
    m.add(&p)?;
    if !a.no_csv {
        for &i in &camp.modelled {
            let id = &cfg.network.intersections[i].id;
            for (name, subset) in [("train", &camp.split.train), ("validation", &camp.split.validation)] {
                let p = a.out.join(format!("dataset_{id}_{name}.csv"));
                write_file(&p, dataset_csv(&camp.runs, subset, i, id, ls)?.as_bytes())?;
                m.add(&p)?;
            }
        }
    }
    m.write_in(&a.out)?;
    let audit = camp.audit();
    println!(
        "{} scenarios (train {}, validation {}, test {}); {} safety assertions, {} violations",
        camp.runs.len(),
        camp.split.train.len(),
        camp.split.validation.len(),
        camp.split.test.len(),
        audit.assertions,
        audit.violations.len()
    );
    Ok(())
}

fn load_config_from(dir: &Path) -> Result<Config> {
    let p = dir.join("config.json");
    load_config(&std::fs::read_to_string(&p).map_err(evplab::error::io_err(&p))?)
}

fn train(a: &TrainArgs) -> Result<()> {
    let cfg = load_config_from(&a.data)?;
    let camp = load_campaign(&a.data)?;
    let mut kinds = Vec::new();
    for r in &a.regressors {
        kinds.push(match r.as_str() {
            "linear" => RegressorKind::Linear,
            "mlp" => RegressorKind::Mlp,
            _ => return Err(Error::Learn(format!("unknown regressor `{r}`"))),
        });
    }
    let mut tc = TrainConfig {
        seed: a.seed,
        ..TrainConfig::default()
    };
    if let Some(e) = a.epochs {
        tc.mlp_epochs = e;
    }
    std::fs::create_dir_all(&a.out).map_err(evplab::error::io_err(&a.out))?;
    let mut m = Manifest::new("train", vec![a.data.join("campaign.json")], Some(a.seed));
    for &i in &camp.modelled {
        let c = train_intersection(&camp, &cfg.network, i, &tc, &kinds)?;
        println!("{}: {} candidates from {} rows", c.id, c.table.len(), c.train_rows);
        let p = a.out.join(format!("{}.json", c.id));
        write_json(&p, &c)?;
        m.add(&p)?;
    }
    let p = a.out.join("train_config.json");
    write_json(&p, &tc)?;
    m.add(&p)?;
    m.write_in(&a.out)
}

fn select(a: &SelectArgs) -> Result<()> {
    let cfg = load_config_from(&a.data)?;
    let camp = load_campaign(&a.data)?;
    let mut sels: Vec<Selection> = Vec::new();
    let mut inputs = vec![a.data.join("campaign.json")];
    for &i in &camp.modelled {
        let p = a.candidates.join(format!("{}.json", cfg.network.intersections[i].id));
        let c: IntersectionCandidates = read_json(&p)?;
        inputs.push(p);
        sels.push(select_intersection(&cfg.network, &cfg.demand, &camp, &c)?);
    }
    std::fs::create_dir_all(&a.out).map_err(evplab::error::io_err(&a.out))?;
    let corridor = evplab::learn::CorridorPolicy {
        models: sels.iter().map(|s| s.model.clone()).collect(),
    };
    let mut m = Manifest::new("select", inputs, None);
    let p = a.out.join("corridor.json");
    save_corridor(&corridor, &p)?;
    m.add(&p)?;
    let summary: Vec<serde_json::Value> = sels
        .iter()
        .map(|s| {
            serde_json::json!({
                "intersection": s.id,
                "regressor": s.model.regressor.kind(),
                "curve": s.model.params.curve.name(),
                "cutoff": s.model.params.cutoff,
                "no_pr_thres": s.model.params.no_pr_thres,
                "score": s.score,
                "durations": s.durations,
                "tied": s.tied,
                "sidestreet_delay_s": s.sidestreet_delay_s,
            })
        })
        .collect();
    let p = a.out.join("selection.json");
    write_json(&p, &summary)?;
    m.add(&p)?;
    let table = selection_table(&sels);
    let p = a.out.join("table.md");
    write_file(&p, table.as_bytes())?;
    m.add(&p)?;
    m.write_in(&a.out)?;
    print!("{table}");
    Ok(())
}

fn compare(a: &CompareArgs) -> Result<()> {
    let cfg = load_config_from(&a.data)?;
    let camp = load_campaign(&a.data)?;
    let kinds: Vec<StrategyKind> = a.strategies.iter().map(|s| parse_strategy(s)).collect::<Result<_>>()?;
    let mut inputs = vec![a.data.join("campaign.json")];
    let corridor = if kinds.contains(&StrategyKind::Mlevp) {
        inputs.push(a.model.clone());
        Some(load_corridor(&a.model)?)
    } else {
        None
    };
    let rep = compare_strategies(&cfg.network, &cfg.demand, &camp.test_scenarios(), &kinds, corridor.as_ref())?;
    let files = render_report(&rep, &a.out)?;
    let p = a.out.join("report.json");
    write_json(&p, &rep)?;
    let mut m = Manifest::new("compare", inputs, None);
    for f in files.iter().chain([&p]) {
        m.add(f)?;
    }
    m.write_in(&a.out)?;
    println!("{:<8} {:>10} {:>8} {:>10}", "strategy", "travel_s", "mph", "preempt_s");
    for &k in &kinds {
        println!(
            "{:<8} {:>10.1} {:>8.2} {:>10.1}",
            k.label(),
            rep.mean(k, "erv_travel_time_s"),
            rep.mean(k, "erv_avg_speed_mph"),
            rep.mean(k, "aggregate_preempt_s")
        );
    }
    Ok(())
}

fn bench(a: &BenchArgs) -> Result<()> {
    let cfg = a.net.load()?;
    let corridor = load_corridor(&a.model)?;
    let desc = ScenarioDescriptor {
        seed: a.seed,
        entry_s: a.entry.unwrap_or_else(|| anchor_s(&cfg.demand)),
        offset_s: 0,
    };
    let r = bench_realtime(&cfg.network, &cfg.demand, &desc, Some(&corridor))?;
    let text = serde_json::to_string(&r)?;
    if let Some(p) = &a.out {
        write_file(p, text.as_bytes())?;
    }
    println!("{text}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    with_jobs(cli.jobs, move || match &cli.cmd {
        Cmd::GenNet { out } => gen_net(out),
        Cmd::Simulate(a) => simulate(a),
        Cmd::Optimal(a) => optimal(a),
        Cmd::GenData(a) => gen_data(a),
        Cmd::Train(a) => train(a),
        Cmd::Select(a) => select(a),
        Cmd::Compare(a) => compare(a),
        Cmd::Bench(a) => bench(a),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
