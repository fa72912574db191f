//! The full protocol: demonstrations, model fits, the four paradigms, logs,
//! metrics and statistics.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::{solve_dare, CostSpec, DEFAULT_DARE_MAX_ITER, DEFAULT_DARE_TOL};
use crate::error::{Error, Result};
use crate::koopman::{extract_linear, fit_koopman, AffineLinearModel, BasisSpec, KoopmanModel, DEFAULT_RIDGE};
use crate::lander::WorldParams;
use crate::metrics::{
    heatmap, model_similarity, trial_record, write_records_csv, ErgodicSpec, ModelSimilarity, TrialRecord,
    DEFAULT_HEATMAP_GRID,
};
use crate::pilots::{NominalController, Pilot, PilotKind, PilotSpec};
use crate::seed::derive_seed;
use crate::stats::{anova_oneway, holm_bonferroni, t_test_two_sample, AnovaResult, Decision, GroupData};
use crate::trial::{run_trial, Assist, Paradigm, TrialLog};

pub const DEFAULT_MASTER_SEED: u64 = 1;
pub const COHORT_SIZE: usize = 16;
pub const GENERAL_POOL_SIZE: usize = 3;
pub const NOVICE_SKILL_RANGE: (f64, f64) = (0.2, 0.6);
pub const ALPHA: f64 = 0.05;

// Key tags keep the seed streams of different purposes apart.
const TAG_SKILL: u64 = 1;
const TAG_PILOT: u64 = 2;
const TAG_DEMO: u64 = 3;
const TAG_EVAL: u64 = 4;
const TAG_EXPERT: u64 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub world: WorldParams,
    pub cost: CostSpec,
    pub ergodic: ErgodicSpec,
    pub pilots: Vec<PilotSpec>,
    /// Indices into `pilots` whose demonstrations train the General model.
    /// These pilots are not evaluated.
    pub general_pool: Vec<usize>,
    pub expert: PilotSpec,
    pub trials_train: usize,
    pub trials_eval: usize,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    pub ridge: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::with_seed(DEFAULT_MASTER_SEED)
    }
}

impl ExperimentConfig {
    /// Default protocol: 16 evaluated novices plus 3 pool novices, skills
    /// drawn uniformly from the novice range.
    pub fn with_seed(master_seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(master_seed, &[TAG_SKILL]));
        let n = COHORT_SIZE + GENERAL_POOL_SIZE;
        let pilots = (0..n)
            .map(|i| {
                let skill = rng.random_range(NOVICE_SKILL_RANGE.0..NOVICE_SKILL_RANGE.1);
                PilotSpec::novice(skill, derive_seed(master_seed, &[TAG_PILOT, i as u64]))
            })
            .collect();
        let world = WorldParams::default();
        Self {
            cost: CostSpec::default(),
            ergodic: ErgodicSpec::for_world(&world),
            world,
            pilots,
            general_pool: (COHORT_SIZE..n).collect(),
            expert: PilotSpec::expert(derive_seed(master_seed, &[TAG_EXPERT])),
            trials_train: 10,
            trials_eval: 10,
            master_seed,
            output_dir: PathBuf::from("experiment_out"),
            ridge: DEFAULT_RIDGE,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.cost.validate()?;
        self.ergodic.validate()?;
        for p in &self.pilots {
            p.validate()?;
        }
        self.expert.validate()?;
        if self.expert.kind != PilotKind::Expert {
            return Err(Error::Config("expert pilot must have kind 'expert'".into()));
        }
        if self.trials_train == 0 {
            return Err(Error::Config("trials_train must be >= 1".into()));
        }
        if !(self.ridge.is_finite() && self.ridge >= 0.0) {
            return Err(Error::Config("ridge must be finite and >= 0".into()));
        }
        if self.general_pool.is_empty() {
            return Err(Error::Config("general_pool must name at least one pilot".into()));
        }
        let mut seen = self.general_pool.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.general_pool.len() {
            return Err(Error::Config("general_pool indices must be distinct".into()));
        }
        if let Some(&bad) = self.general_pool.iter().find(|&&i| i >= self.pilots.len()) {
            return Err(Error::Config(format!("general_pool index {bad} out of range")));
        }
        if self.cohort().is_empty() {
            return Err(Error::Config("no pilots left to evaluate outside general_pool".into()));
        }
        Ok(())
    }

    /// Indices of evaluated pilots.
    pub fn cohort(&self) -> Vec<usize> {
        (0..self.pilots.len()).filter(|i| !self.general_pool.contains(i)).collect()
    }
}

pub fn pilot_id(index: usize) -> String {
    format!("pilot_{index:02}")
}

pub const EXPERT_ID: &str = "expert";

/// Seed of one evaluation trial; depends only on its key.
pub fn eval_seed(master: u64, pilot: usize, paradigm: Paradigm, trial: usize) -> u64 {
    derive_seed(master, &[TAG_EVAL, pilot as u64, paradigm.index(), trial as u64])
}

/// Seed of one demonstration trial. The expert uses its own tag.
pub fn demo_seed(master: u64, pilot: Option<usize>, trial: usize) -> u64 {
    match pilot {
        Some(p) => derive_seed(master, &[TAG_DEMO, p as u64, trial as u64]),
        None => derive_seed(master, &[TAG_DEMO, TAG_EXPERT, trial as u64]),
    }
}

pub fn log_path(out: &Path, pilot: usize, paradigm: Paradigm, trial: usize) -> PathBuf {
    out.join(pilot_id(pilot)).join(paradigm.as_str()).join(format!("trial_{trial:02}.json"))
}

fn demo_path(out: &Path, who: &str, trial: usize) -> PathBuf {
    out.join("demos").join(who).join(format!("trial_{trial:02}.json"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotEntry {
    pub index: usize,
    pub pilot_id: String,
    pub skill: f64,
    pub role: String,
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub name: String,
    pub path: String,
    pub n_samples: usize,
    pub dare_residual: f64,
    pub spectral_radius: f64,
    pub u_ff: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelsSection {
    pub individual: Vec<ModelEntry>,
    pub general: ModelEntry,
    pub expert: ModelEntry,
    /// Spread of the Individual models, in percent of the entry means.
    pub similarity: Option<ModelSimilarity>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParadigmSummary {
    pub paradigm: Paradigm,
    pub trials: usize,
    pub successes: usize,
    pub success_rate: Option<f64>,
    pub mean_time_s: Option<f64>,
    pub mean_path_length_m: Option<f64>,
    pub mean_total_cost: Option<f64>,
    pub mean_agreement: Option<f64>,
    pub mean_epsilon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub paradigm: Paradigm,
    pub n: usize,
    pub mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseTest {
    pub a: Paradigm,
    pub b: Paradigm,
    pub t: f64,
    pub df: usize,
    pub p: f64,
    pub decision: Decision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub metric: String,
    /// "successful" or "all".
    pub trials: String,
    pub groups: Vec<GroupSummary>,
    pub anova: Option<AnovaResult>,
    pub pairwise: Vec<PairwiseTest>,
    pub note: Option<String>,
}

/// Everything derivable from the evaluation logs alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSection {
    pub ergodic: ErgodicSpec,
    pub trials: Vec<TrialRecord>,
    pub summary: Vec<ParadigmSummary>,
    pub stats: Vec<MetricStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub pilots: Vec<PilotEntry>,
    pub demos: usize,
    pub models: ModelsSection,
    pub metrics: MetricsSection,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Order used for every table: pilot id with numeric runs compared as
/// numbers, then paradigm.
fn record_key(r: &TrialRecord) -> (Vec<NatChunk>, u64) {
    (natural_key(&r.pilot_id), r.paradigm.index())
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum NatChunk {
    Num(u64),
    Text(String),
}

fn natural_key(s: &str) -> Vec<NatChunk> {
    let mut out = Vec::new();
    let mut buf = String::new();
    let mut digits = false;
    for ch in s.chars() {
        if !buf.is_empty() && ch.is_ascii_digit() != digits {
            out.push(chunk(&buf, digits));
            buf.clear();
        }
        digits = ch.is_ascii_digit();
        buf.push(ch);
    }
    if !buf.is_empty() {
        out.push(chunk(&buf, digits));
    }
    out
}

fn chunk(s: &str, digits: bool) -> NatChunk {
    match (digits, s.parse()) {
        (true, Ok(n)) => NatChunk::Num(n),
        _ => NatChunk::Text(s.to_owned()),
    }
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Metrics and statistics over evaluation logs. Records are ordered by
/// pilot then paradigm; within that, input order is kept.
pub fn compute_metrics(logs: &[TrialLog], cost: &CostSpec, ergodic: &ErgodicSpec) -> Result<MetricsSection> {
    let target = ergodic.target()?;
    let mut trials = logs.iter().map(|l| trial_record(l, cost, &target)).collect::<Result<Vec<_>>>()?;
    trials.sort_by_cached_key(record_key);

    let by_paradigm = |p: Paradigm| trials.iter().filter(move |r| r.paradigm == p);
    let summary = Paradigm::ALL
        .iter()
        .map(|&p| {
            let all: Vec<&TrialRecord> = by_paradigm(p).collect();
            let ok: Vec<&TrialRecord> = all.iter().copied().filter(|r| r.success).collect();
            let pick = |v: &[&TrialRecord], f: fn(&TrialRecord) -> f64| mean(&v.iter().map(|r| f(r)).collect::<Vec<_>>());
            ParadigmSummary {
                paradigm: p,
                trials: all.len(),
                successes: ok.len(),
                success_rate: (!all.is_empty()).then(|| ok.len() as f64 / all.len() as f64),
                mean_time_s: pick(&ok, |r| r.time_s),
                mean_path_length_m: pick(&ok, |r| r.path_length_m),
                mean_total_cost: pick(&ok, |r| r.total_cost),
                mean_agreement: mean(&all.iter().filter_map(|r| r.agreement).collect::<Vec<_>>()),
                mean_epsilon: pick(&all, |r| r.epsilon),
            }
        })
        .collect();

    let stats = if trials.is_empty() {
        Vec::new()
    } else {
        let metric = |name: &str, successful: bool, f: fn(&TrialRecord) -> f64| {
            let groups: Vec<GroupData> = Paradigm::ALL
                .iter()
                .map(|&p| {
                    let vals = by_paradigm(p).filter(|r| !successful || r.success).map(f).collect();
                    GroupData::new(p.as_str(), vals)
                })
                .collect();
            metric_stats(name, successful, &groups)
        };
        vec![
            metric("time_s", true, |r| r.time_s),
            metric("path_length_m", true, |r| r.path_length_m),
            metric("total_cost", true, |r| r.total_cost),
            metric("epsilon", false, |r| r.epsilon),
            metric("success", false, |r| f64::from(u8::from(r.success))),
        ]
    };
    Ok(MetricsSection { ergodic: ergodic.clone(), trials, summary, stats })
}

fn metric_stats(name: &str, successful: bool, groups: &[GroupData]) -> MetricStats {
    let summaries = Paradigm::ALL
        .iter()
        .zip(groups)
        .map(|(&p, g)| GroupSummary { paradigm: p, n: g.values.len(), mean: mean(&g.values) })
        .collect();
    let mut notes = Vec::new();
    let anova = anova_oneway(groups).map_err(|e| notes.push(format!("anova: {e}"))).ok();
    let mut tests = Vec::new();
    for i in 0..groups.len() {
        for j in i + 1..groups.len() {
            match t_test_two_sample(&groups[i], &groups[j]) {
                Ok(t) => tests.push((Paradigm::ALL[i], Paradigm::ALL[j], t)),
                Err(e) => notes.push(format!("{} vs {}: {e}", groups[i].label, groups[j].label)),
            }
        }
    }
    let decisions = holm_bonferroni(&tests.iter().map(|(_, _, t)| t.p).collect::<Vec<_>>(), ALPHA);
    let pairwise = tests
        .into_iter()
        .zip(decisions)
        .map(|((a, b, t), decision)| PairwiseTest { a, b, t: t.t, df: t.df, p: t.p, decision })
        .collect();
    MetricStats {
        metric: name.to_owned(),
        trials: if successful { "successful" } else { "all" }.to_owned(),
        groups: summaries,
        anova,
        pairwise,
        note: (!notes.is_empty()).then(|| notes.join("; ")),
    }
}

/// Load every `trial_*.json` below `dir`, skipping the `demos` subtree, in
/// natural path order.
pub fn load_log_dir(dir: &Path) -> Result<Vec<TrialLog>> {
    let mut paths = Vec::new();
    collect_trial_files(dir, &mut paths)?;
    paths.sort_by_cached_key(|p| natural_key(&p.to_string_lossy()));
    paths.iter().map(|p| TrialLog::load(p)).collect()
}

fn collect_trial_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        let name = entry.file_name().to_string_lossy().into_owned();
        if path.is_dir() {
            if name != "demos" {
                collect_trial_files(&path, out)?;
            }
        } else if name.starts_with("trial_") && name.ends_with(".json") {
            out.push(path);
        }
    }
    Ok(())
}

/// Write the per-trial table and one heatmap per paradigm.
pub fn write_side_files(out: &Path, metrics: &MetricsSection, logs: &[TrialLog], world: &WorldParams) -> Result<()> {
    write_records_csv(&out.join("trials.csv"), &metrics.trials)?;
    for p in Paradigm::ALL {
        let sel: Vec<&TrialLog> = logs.iter().filter(|l| l.paradigm == p).collect();
        if sel.is_empty() {
            continue;
        }
        let h = heatmap(&sel, DEFAULT_HEATMAP_GRID, [world.l1, world.l2])?;
        h.write_csv(&out.join("heatmaps").join(format!("{}.csv", p.as_str())))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Parallel,
    Serial,
}

fn map_jobs<J, R, F>(jobs: Vec<J>, exec: Execution, f: F) -> Vec<R>
where
    J: Send,
    R: Send,
    F: Fn(J) -> R + Sync + Send,
{
    match exec {
        Execution::Parallel => jobs.into_par_iter().map(f).collect(),
        Execution::Serial => jobs.into_iter().map(f).collect(),
    }
}

struct Fitted {
    model: KoopmanModel,
    assist: Assist,
}

fn fit_assist(logs: &[&TrialLog], cfg: &ExperimentConfig) -> Result<Fitted> {
    let trajs: Vec<_> = logs.iter().map(|l| l.joint_samples()).collect();
    let model = fit_koopman(&trajs, &BasisSpec::linear_with_bias(), cfg.ridge)?;
    let lin = extract_linear(&model)?;
    let sol = solve_dare(&lin, &cfg.cost, DEFAULT_DARE_TOL, DEFAULT_DARE_MAX_ITER)?;
    Ok(Fitted { model, assist: Assist { solution: Arc::new(sol), cost: cfg.cost.clone() } })
}

fn save_model(out: &Path, name: &str, fitted: &Fitted) -> Result<ModelEntry> {
    let rel = format!("models/{name}.json");
    let sol = &fitted.assist.solution;
    fitted.model.save(&out.join(&rel), Some(sol.export()))?;
    Ok(ModelEntry {
        name: name.to_owned(),
        path: rel,
        n_samples: fitted.model.n_samples,
        dare_residual: sol.residual,
        spectral_radius: sol.spectral_radius,
        u_ff: [sol.u_ff[0], sol.u_ff[1]],
    })
}

pub fn run_experiment(cfg: &ExperimentConfig, exec: Execution) -> Result<ExperimentReport> {
    cfg.validate()?;
    let out = cfg.output_dir.as_path();
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let controller = NominalController::new(&cfg.world)?;

    let fly = |spec: &PilotSpec, paradigm: Paradigm, assist: Option<Assist>, id: &str, seed: u64| -> Result<TrialLog> {
        let mut pilot = Pilot::new(spec, controller.clone(), seed)?;
        run_trial(&cfg.world, paradigm, assist, &mut pilot, id, seed)
    };

    // 1. unassisted demonstrations for every pilot and the expert
    let mut demo_jobs: Vec<(Option<usize>, usize)> = Vec::new();
    for p in 0..cfg.pilots.len() {
        demo_jobs.extend((0..cfg.trials_train).map(|t| (Some(p), t)));
    }
    demo_jobs.extend((0..cfg.trials_train).map(|t| (None, t)));
    let demos = map_jobs(demo_jobs, exec, |(p, t)| -> Result<(Option<usize>, TrialLog)> {
        let (spec, id) = match p {
            Some(i) => (&cfg.pilots[i], pilot_id(i)),
            None => (&cfg.expert, EXPERT_ID.to_owned()),
        };
        let log = fly(spec, Paradigm::UserOnly, None, &id, demo_seed(cfg.master_seed, p, t))?;
        log.save(&demo_path(out, &id, t))?;
        Ok((p, log))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let demos_of = |who: Option<usize>| demos.iter().filter(move |(p, _)| *p == who).map(|(_, l)| l);

    // 2. models
    let expert = fit_assist(&demos_of(None).collect::<Vec<_>>(), cfg)?;
    let pool: Vec<&TrialLog> = cfg.general_pool.iter().flat_map(|&i| demos_of(Some(i))).collect();
    let general = fit_assist(&pool, cfg)?;
    let mut models = ModelsSection {
        individual: Vec::new(),
        general: save_model(out, "general", &general)?,
        expert: save_model(out, "expert", &expert)?,
        similarity: None,
    };
    let mut entries = Vec::new();
    let mut active: Vec<(usize, Fitted)> = Vec::new();
    for (i, spec) in cfg.pilots.iter().enumerate() {
        let mut entry = PilotEntry {
            index: i,
            pilot_id: pilot_id(i),
            skill: spec.skill,
            role: if cfg.general_pool.contains(&i) { "general_pool" } else { "cohort" }.to_owned(),
            skipped: None,
        };
        if entry.role == "cohort" {
            match fit_assist(&demos_of(Some(i)).collect::<Vec<_>>(), cfg) {
                Ok(f) => {
                    models.individual.push(save_model(out, &format!("individual_{}", pilot_id(i)), &f)?);
                    active.push((i, f));
                }
                Err(e) => entry.skipped = Some(e.to_string()),
            }
        }
        entries.push(entry);
    }
    let lins: Vec<AffineLinearModel> = active.iter().map(|(_, f)| extract_linear(&f.model)).collect::<Result<_>>()?;
    models.similarity = model_similarity(&lins).ok();

    // 3. evaluation
    let mut eval_jobs = Vec::new();
    for (k, (i, _)) in active.iter().enumerate() {
        for p in Paradigm::ALL {
            eval_jobs.extend((0..cfg.trials_eval).map(|t| (k, *i, p, t)));
        }
    }
    let logs = map_jobs(eval_jobs, exec, |(k, i, p, t)| -> Result<TrialLog> {
        let assist = match p {
            Paradigm::UserOnly => None,
            Paradigm::SharedIndividual => Some(active[k].1.assist.clone()),
            Paradigm::SharedGeneral => Some(general.assist.clone()),
            Paradigm::SharedExpert => Some(expert.assist.clone()),
        };
        let log = fly(&cfg.pilots[i], p, assist, &pilot_id(i), eval_seed(cfg.master_seed, i, p, t))?;
        log.save(&log_path(out, i, p, t))?;
        Ok(log)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    // 4. reduction
    let metrics = compute_metrics(&logs, &cfg.cost, &cfg.ergodic)?;
    write_side_files(out, &metrics, &logs, &cfg.world)?;
    let report = ExperimentReport { config: cfg.clone(), pilots: entries, demos: demos.len(), models, metrics };
    let path = out.join("report.json");
    std::fs::write(&path, report.to_json()).map_err(|e| Error::io(&path, e))?;
    Ok(report)
}
