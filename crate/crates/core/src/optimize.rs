//! NSGA-II fitting of the free neural parameters against observed firing
//! rates, with one objective per stimulation frequency.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::afferent::AfferentType;
use crate::analysis::firing_rate;
use crate::error::{Error, Result};
use crate::fem::StressTrace;
use crate::neural::{run_chain, AfferentParams};

/// Stimulation frequencies with their own objective, in objective order.
pub const FREQUENCIES_HZ: [f64; 4] = [20.0, 50.0, 100.0, 300.0];

fn frequency_slot(freq_hz: f64) -> Option<usize> {
    FREQUENCIES_HZ
        .iter()
        .position(|&f| (f - freq_hz).abs() < 1e-9)
}

fn same_amplitude(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-6 * a.abs().max(b.abs()).max(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservedRate {
    pub freq_hz: f64,
    pub amplitude_um: f64,
    pub rate_ips: f64,
}

/// Observed firing rates of one afferent type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedRateSet {
    pub afferent: AfferentType,
    pub records: Vec<ObservedRate>,
}

impl ObservedRateSet {
    pub fn validate(&self) -> Result<()> {
        if self.records.is_empty() {
            return Err(Error::validation(
                "observed",
                format!("no records for {}", self.afferent),
            ));
        }
        for (i, r) in self.records.iter().enumerate() {
            if frequency_slot(r.freq_hz).is_none() {
                return Err(Error::validation(
                    format!("observed[{i}].freq_hz"),
                    format!("{} Hz is not one of 20, 50, 100, 300", r.freq_hz),
                ));
            }
            if !(r.amplitude_um.is_finite() && r.amplitude_um >= 0.0) {
                return Err(Error::validation(
                    format!("observed[{i}].amplitude_um"),
                    "must be finite and >= 0",
                ));
            }
            if !(r.rate_ips.is_finite() && r.rate_ips >= 0.0) {
                return Err(Error::validation(
                    format!("observed[{i}].rate_ips"),
                    "must be finite and >= 0",
                ));
            }
            if self.records[..i]
                .iter()
                .any(|o| o.freq_hz == r.freq_hz && same_amplitude(o.amplitude_um, r.amplitude_um))
            {
                return Err(Error::validation(
                    format!("observed[{i}]"),
                    format!(
                        "duplicate condition {} Hz / {} um",
                        r.freq_hz, r.amplitude_um
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Parses `afferent,freq_hz,amplitude_um,rate_ips` rows, grouped by
    /// afferent. Lines starting with `#` are skipped.
    pub fn from_csv(text: &str) -> Result<BTreeMap<AfferentType, ObservedRateSet>> {
        let mut sets: BTreeMap<AfferentType, ObservedRateSet> = BTreeMap::new();
        let mut header_seen = false;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !header_seen {
                header_seen = true;
                if line.replace(' ', "") != "afferent,freq_hz,amplitude_um,rate_ips" {
                    return Err(Error::Parse {
                        line: i + 1,
                        reason: "expected header `afferent,freq_hz,amplitude_um,rate_ips`".into(),
                    });
                }
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 4 {
                return Err(Error::Parse {
                    line: i + 1,
                    reason: format!("expected 4 columns, got {}", cols.len()),
                });
            }
            let afferent: AfferentType = cols[0].parse().map_err(|e: Error| Error::Parse {
                line: i + 1,
                reason: e.to_string(),
            })?;
            let num = |s: &str, name: &str| {
                s.parse::<f64>().map_err(|_| Error::Parse {
                    line: i + 1,
                    reason: format!("bad {name} `{s}`"),
                })
            };
            let record = ObservedRate {
                freq_hz: num(cols[1], "freq_hz")?,
                amplitude_um: num(cols[2], "amplitude_um")?,
                rate_ips: num(cols[3], "rate_ips")?,
            };
            sets.entry(afferent)
                .or_insert_with(|| ObservedRateSet {
                    afferent,
                    records: Vec::new(),
                })
                .records
                .push(record);
        }
        if sets.is_empty() {
            return Err(Error::validation("observed", "no observed rates in file"));
        }
        for set in sets.values() {
            set.validate()?;
        }
        Ok(sets)
    }

    pub fn to_csv(sets: &[&ObservedRateSet]) -> String {
        let mut out = String::from("afferent,freq_hz,amplitude_um,rate_ips\n");
        for set in sets {
            for r in &set.records {
                let _ = writeln!(
                    out,
                    "{},{},{},{}",
                    set.afferent, r.freq_hz, r.amplitude_um, r.rate_ips
                );
            }
        }
        out
    }
}

/// Search interval of one parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub lower: f64,
    pub upper: f64,
    /// Search uniformly in `ln(value)` instead of `value`.
    pub log: bool,
}

impl Bound {
    pub fn linear(lower: f64, upper: f64) -> Self {
        Bound {
            lower,
            upper,
            log: false,
        }
    }

    pub fn log(lower: f64, upper: f64) -> Self {
        Bound {
            lower,
            upper,
            log: true,
        }
    }

    pub fn validate(&self, field: &str) -> Result<()> {
        if !(self.lower.is_finite() && self.upper.is_finite() && self.lower < self.upper) {
            return Err(Error::validation(
                field,
                "bounds must be finite with lower < upper",
            ));
        }
        if self.log && self.lower <= 0.0 {
            return Err(Error::validation(
                field,
                "log-scaled bounds must be positive",
            ));
        }
        Ok(())
    }

    pub fn from_unit(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, 1.0);
        if self.log {
            let (lo, hi) = (self.lower.ln(), self.upper.ln());
            (lo + t * (hi - lo)).exp().clamp(self.lower, self.upper)
        } else {
            self.lower + t * (self.upper - self.lower)
        }
    }

    pub fn to_unit(&self, v: f64) -> f64 {
        let t = if self.log {
            (v.ln() - self.lower.ln()) / (self.upper.ln() - self.lower.ln())
        } else {
            (v - self.lower) / (self.upper - self.lower)
        };
        t.clamp(0.0, 1.0)
    }
}

/// Free parameters of one afferent type: `τ_m`, the half-saturation
/// constant(s), then `α′`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSpace {
    pub afferent: AfferentType,
    pub names: Vec<String>,
    pub bounds: Vec<Bound>,
}

impl ParameterSpace {
    pub fn default_for(afferent: AfferentType) -> Self {
        let names: Vec<&str> = match afferent {
            AfferentType::SA => vec!["tau_m_ms", "a1", "a2", "alpha_prime"],
            AfferentType::RA => vec!["tau_m_ms", "a3", "alpha_prime"],
            AfferentType::PC => vec!["tau_m_ms", "a4", "alpha_prime"],
        };
        let mut bounds = vec![Bound::linear(1.0, 2000.0)];
        bounds
            .extend((0..AfferentParams::saturation_terms(afferent)).map(|_| Bound::log(1.0, 1e6)));
        bounds.push(Bound::linear(0.01, 100.0));
        ParameterSpace {
            afferent,
            names: names.into_iter().map(String::from).collect(),
            bounds,
        }
    }

    pub fn dimension(&self) -> usize {
        self.bounds.len()
    }

    pub fn validate(&self) -> Result<()> {
        let expected = AfferentParams::saturation_terms(self.afferent) + 2;
        if self.bounds.len() != expected || self.names.len() != expected {
            return Err(Error::validation(
                "bounds",
                format!(
                    "{} afferents have {expected} free parameters",
                    self.afferent
                ),
            ));
        }
        for (name, b) in self.names.iter().zip(&self.bounds) {
            b.validate(&format!("bounds.{name}"))?;
        }
        Ok(())
    }
}

/// Values of the free parameters, ordered as in [`ParameterSpace`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateVector {
    pub afferent: AfferentType,
    pub values: Vec<f64>,
}

impl CandidateVector {
    pub fn from_params(params: &AfferentParams) -> Self {
        let mut values = vec![params.tau_m_ms];
        values.extend(&params.half_saturation);
        values.push(params.alpha_prime);
        CandidateVector {
            afferent: params.afferent,
            values,
        }
    }

    /// `base` with the free parameters replaced.
    pub fn apply(&self, base: &AfferentParams) -> Result<AfferentParams> {
        if base.afferent != self.afferent {
            return Err(Error::AfferentMismatch {
                expected: self.afferent.to_string(),
                got: base.afferent.to_string(),
            });
        }
        let terms = AfferentParams::saturation_terms(self.afferent);
        if self.values.len() != terms + 2 {
            return Err(Error::validation(
                "candidate",
                format!(
                    "{} afferents take {} values, got {}",
                    self.afferent,
                    terms + 2,
                    self.values.len()
                ),
            ));
        }
        let mut p = base.clone();
        p.tau_m_ms = self.values[0];
        p.half_saturation = self.values[1..=terms].to_vec();
        p.alpha_prime = self.values[terms + 1];
        Ok(p)
    }
}

/// Precomputed stress at one stimulation condition.
#[derive(Debug, Clone, PartialEq)]
pub struct BankEntry {
    pub stimulus_id: String,
    pub freq_hz: f64,
    pub amplitude_um: f64,
    pub discard_ms: f64,
    pub window_ms: f64,
    pub trace: StressTrace,
}

/// Stress traces of one afferent node over a set of conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct StressBank {
    pub afferent: AfferentType,
    pub entries: Vec<BankEntry>,
}

impl StressBank {
    pub fn find(&self, freq_hz: f64, amplitude_um: f64) -> Option<usize> {
        self.entries.iter().position(|e| {
            (e.freq_hz - freq_hz).abs() < 1e-9 && same_amplitude(e.amplitude_um, amplitude_um)
        })
    }
}

/// Rate of `params` on one bank entry.
pub fn predicted_rate(entry: &BankEntry, params: &AfferentParams) -> Result<f64> {
    let train = run_chain(&entry.trace.values, entry.trace.dt_ms, params)?;
    firing_rate(&train, entry.discard_ms, entry.window_ms)
}

/// Rates `params` produce on every bank entry, as an observed set.
pub fn synthesize_observed(bank: &StressBank, params: &AfferentParams) -> Result<ObservedRateSet> {
    let records = bank
        .entries
        .iter()
        .filter(|e| frequency_slot(e.freq_hz).is_some())
        .map(|e| {
            Ok(ObservedRate {
                freq_hz: e.freq_hz,
                amplitude_um: e.amplitude_um,
                rate_ips: predicted_rate(e, params)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ObservedRateSet {
        afferent: bank.afferent,
        records,
    })
}

/// Per-frequency mean squared rate error over `(freq_hz, predicted,
/// observed)` rows. Frequencies without rows score 0.
pub fn objective_vector(rows: &[(f64, f64, f64)]) -> [f64; 4] {
    let mut sum = [0.0; 4];
    let mut count = [0usize; 4];
    for &(f, predicted, observed) in rows {
        if let Some(slot) = frequency_slot(f) {
            sum[slot] += (predicted - observed).powi(2);
            count[slot] += 1;
        }
    }
    std::array::from_fn(|i| {
        if count[i] == 0 {
            0.0
        } else {
            sum[i] / count[i] as f64
        }
    })
}

/// Observed rates paired with the bank entries that reproduce them.
#[derive(Debug, Clone)]
pub struct FitProblem<'b> {
    bank: &'b StressBank,
    base: AfferentParams,
    /// `(bank index, freq_hz, observed rate)`.
    targets: Vec<(usize, f64, f64)>,
}

impl<'b> FitProblem<'b> {
    pub fn new(
        bank: &'b StressBank,
        observed: &ObservedRateSet,
        base: AfferentParams,
    ) -> Result<Self> {
        observed.validate()?;
        for (expected, got) in [
            (bank.afferent, observed.afferent),
            (bank.afferent, base.afferent),
        ] {
            if expected != got {
                return Err(Error::AfferentMismatch {
                    expected: expected.to_string(),
                    got: got.to_string(),
                });
            }
        }
        let mut targets = Vec::with_capacity(observed.records.len());
        let mut missing = Vec::new();
        for r in &observed.records {
            match bank.find(r.freq_hz, r.amplitude_um) {
                Some(i) => targets.push((i, r.freq_hz, r.rate_ips)),
                None => missing.push(format!(
                    "{} {} Hz {} um",
                    observed.afferent, r.freq_hz, r.amplitude_um
                )),
            }
        }
        if !missing.is_empty() {
            return Err(Error::MissingConditions(missing));
        }
        Ok(FitProblem {
            bank,
            base,
            targets,
        })
    }

    pub fn base(&self) -> &AfferentParams {
        &self.base
    }

    pub fn evaluate(&self, candidate: &CandidateVector) -> Result<[f64; 4]> {
        let params = candidate.apply(&self.base)?;
        params.validate()?;
        let rows = self
            .targets
            .iter()
            .map(|&(i, f, observed)| {
                Ok((f, predicted_rate(&self.bank.entries[i], &params)?, observed))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(objective_vector(&rows))
    }
}

/// Four per-frequency objectives of `candidate` against `observed`.
pub fn objectives(
    candidate: &CandidateVector,
    base: &AfferentParams,
    bank: &StressBank,
    observed: &ObservedRateSet,
) -> Result<[f64; 4]> {
    FitProblem::new(bank, observed, base.clone())?.evaluate(candidate)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Nsga2Config {
    pub population: usize,
    /// Total objective evaluations, the initial population included.
    pub budget: usize,
    pub crossover_probability: f64,
    pub crossover_eta: f64,
    pub mutation_eta: f64,
    /// Per-variable mutation probability; `None` means `1/n`.
    pub mutation_probability: Option<f64>,
}

impl Default for Nsga2Config {
    fn default() -> Self {
        Nsga2Config {
            population: 100,
            budget: 10_000,
            crossover_probability: 0.9,
            crossover_eta: 15.0,
            mutation_eta: 20.0,
            mutation_probability: None,
        }
    }
}

impl Nsga2Config {
    pub fn validate(&self) -> Result<()> {
        if self.population < 2 {
            return Err(Error::validation("population", "needs at least 2 members"));
        }
        if self.budget < self.population {
            return Err(Error::validation(
                "budget",
                "must be at least the population size",
            ));
        }
        if !(0.0..=1.0).contains(&self.crossover_probability) {
            return Err(Error::validation(
                "crossover_probability",
                "must lie in [0, 1]",
            ));
        }
        if !(self.crossover_eta >= 0.0 && self.mutation_eta >= 0.0) {
            return Err(Error::validation(
                "crossover_eta",
                "distribution indices must be >= 0",
            ));
        }
        if let Some(p) = self.mutation_probability {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::validation(
                    "mutation_probability",
                    "must lie in [0, 1]",
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrontMember {
    pub params: Vec<f64>,
    pub objectives: Vec<f64>,
    pub rank: usize,
    pub crowding: f64,
}

impl FrontMember {
    pub fn objective_sum(&self) -> f64 {
        self.objectives.iter().sum()
    }
}

/// Final population sorted by rank, then crowding distance.
#[derive(Debug, Clone, PartialEq)]
pub struct ParetoFront {
    pub members: Vec<FrontMember>,
    pub evaluations: usize,
    /// Lowest objective sum evaluated so far, after each generation.
    pub best_sum_history: Vec<f64>,
}

impl ParetoFront {
    pub fn rank0(&self) -> impl Iterator<Item = &FrontMember> {
        self.members.iter().filter(|m| m.rank == 0)
    }

    /// CSV `rank,objective_20,objective_50,objective_100,objective_300,<params>`.
    pub fn to_csv(&self, param_names: &[String]) -> String {
        let mut out = String::from("rank,objective_20,objective_50,objective_100,objective_300");
        for n in param_names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for m in &self.members {
            let _ = write!(out, "{}", m.rank);
            for v in m.objectives.iter().chain(&m.params) {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// `a` dominates `b` when it is no worse everywhere and better somewhere.
pub fn dominates(a: &[f64], b: &[f64]) -> bool {
    let mut better = false;
    for (x, y) in a.iter().zip(b) {
        if x > y {
            return false;
        }
        better |= x < y;
    }
    better
}

/// Fronts of indices, best first.
pub fn non_dominated_sort(objectives: &[Vec<f64>]) -> Vec<Vec<usize>> {
    let n = objectives.len();
    let mut dominated_by: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut counts = vec![0usize; n];
    for i in 0..n {
        for j in i + 1..n {
            if dominates(&objectives[i], &objectives[j]) {
                dominated_by[i].push(j);
                counts[j] += 1;
            } else if dominates(&objectives[j], &objectives[i]) {
                dominated_by[j].push(i);
                counts[i] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| counts[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            for &j in &dominated_by[i] {
                counts[j] -= 1;
                if counts[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        fronts.push(current);
        current = next;
    }
    fronts
}

/// Crowding distance of each member of one front, in `front` order.
pub fn crowding_distance(objectives: &[Vec<f64>], front: &[usize]) -> Vec<f64> {
    let n = front.len();
    let mut dist = vec![0.0; n];
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    let m = objectives[front[0]].len();
    let mut order: Vec<usize> = (0..n).collect();
    for k in 0..m {
        order.sort_by(|&a, &b| objectives[front[a]][k].total_cmp(&objectives[front[b]][k]));
        let lo = objectives[front[order[0]]][k];
        let hi = objectives[front[order[n - 1]]][k];
        dist[order[0]] = f64::INFINITY;
        dist[order[n - 1]] = f64::INFINITY;
        if hi > lo {
            for w in 1..n - 1 {
                let gap = objectives[front[order[w + 1]]][k] - objectives[front[order[w - 1]]][k];
                dist[order[w]] += gap / (hi - lo);
            }
        }
    }
    dist
}

struct Individual {
    /// Position in the unit cube.
    genes: Vec<f64>,
    objectives: Vec<f64>,
    rank: usize,
    crowding: f64,
}

fn sbx(rng: &mut ChaCha8Rng, a: &[f64], b: &[f64], cfg: &Nsga2Config) -> (Vec<f64>, Vec<f64>) {
    let (mut c1, mut c2) = (a.to_vec(), b.to_vec());
    if rng.random::<f64>() > cfg.crossover_probability {
        return (c1, c2);
    }
    let eta = cfg.crossover_eta;
    let spread = |u: f64, beta: f64| {
        let alpha = 2.0 - beta.powf(-(eta + 1.0));
        if u <= 1.0 / alpha {
            (u * alpha).powf(1.0 / (eta + 1.0))
        } else {
            (1.0 / (2.0 - u * alpha)).powf(1.0 / (eta + 1.0))
        }
    };
    for i in 0..a.len() {
        if rng.random::<f64>() > 0.5 || (a[i] - b[i]).abs() <= 1e-14 {
            continue;
        }
        let (y1, y2) = (a[i].min(b[i]), a[i].max(b[i]));
        let u = rng.random::<f64>();
        let bq1 = spread(u, 1.0 + 2.0 * y1 / (y2 - y1));
        let bq2 = spread(u, 1.0 + 2.0 * (1.0 - y2) / (y2 - y1));
        let lo = (0.5 * ((y1 + y2) - bq1 * (y2 - y1))).clamp(0.0, 1.0);
        let hi = (0.5 * ((y1 + y2) + bq2 * (y2 - y1))).clamp(0.0, 1.0);
        if rng.random::<f64>() <= 0.5 {
            c1[i] = hi;
            c2[i] = lo;
        } else {
            c1[i] = lo;
            c2[i] = hi;
        }
    }
    (c1, c2)
}

fn polynomial_mutation(rng: &mut ChaCha8Rng, genes: &mut [f64], probability: f64, eta: f64) {
    let power = 1.0 / (eta + 1.0);
    for y in genes.iter_mut() {
        if rng.random::<f64>() > probability {
            continue;
        }
        let r = rng.random::<f64>();
        let dq = if r <= 0.5 {
            let xy = 1.0 - *y;
            (2.0 * r + (1.0 - 2.0 * r) * xy.powf(eta + 1.0)).powf(power) - 1.0
        } else {
            let xy = *y;
            1.0 - (2.0 * (1.0 - r) + 2.0 * (r - 0.5) * xy.powf(eta + 1.0)).powf(power)
        };
        *y = (*y + dq).clamp(0.0, 1.0);
    }
}

fn tournament<'a>(rng: &mut ChaCha8Rng, pop: &'a [Individual]) -> &'a Individual {
    let i = rng.random_range(0..pop.len());
    let mut j = rng.random_range(0..pop.len() - 1);
    if j >= i {
        j += 1;
    }
    let (a, b) = (&pop[i], &pop[j]);
    if a.rank != b.rank {
        return if a.rank < b.rank { a } else { b };
    }
    if b.crowding > a.crowding {
        b
    } else {
        a
    }
}

/// Sorts `pool` into fronts and keeps the best `keep`, assigning rank and
/// crowding distance to the survivors.
fn environmental_selection(mut pool: Vec<Individual>, keep: usize) -> Vec<Individual> {
    let objs: Vec<Vec<f64>> = pool.iter().map(|p| p.objectives.clone()).collect();
    let mut chosen: Vec<usize> = Vec::with_capacity(keep);
    for (rank, front) in non_dominated_sort(&objs).into_iter().enumerate() {
        if chosen.len() >= keep {
            break;
        }
        let dist = crowding_distance(&objs, &front);
        for (&i, &d) in front.iter().zip(&dist) {
            pool[i].rank = rank;
            pool[i].crowding = d;
        }
        let mut order: Vec<usize> = (0..front.len()).collect();
        order.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(front[a].cmp(&front[b])));
        let room = keep - chosen.len();
        chosen.extend(order.into_iter().take(room).map(|k| front[k]));
    }
    let mut slots: Vec<Option<Individual>> = pool.into_iter().map(Some).collect();
    chosen
        .into_iter()
        .map(|i| slots[i].take().expect("chosen once"))
        .collect()
}

/// Multi-objective minimization of `eval` over the box `bounds`.
///
/// Evaluations of one generation run in parallel; every random draw happens
/// on the calling thread, so the result depends only on `seed`.
pub fn nsga2<F>(eval: F, bounds: &[Bound], config: &Nsga2Config, seed: u64) -> Result<ParetoFront>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    config.validate()?;
    if bounds.is_empty() {
        return Err(Error::validation("bounds", "no parameters to optimize"));
    }
    for (i, b) in bounds.iter().enumerate() {
        b.validate(&format!("bounds[{i}]"))?;
    }
    let n = bounds.len();
    let mutation_probability = config.mutation_probability.unwrap_or(1.0 / n as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let decode = |genes: &[f64]| -> Vec<f64> {
        genes
            .iter()
            .zip(bounds)
            .map(|(&t, b)| b.from_unit(t))
            .collect()
    };

    let mut objective_count: Option<usize> = None;
    let mut evaluate = |genomes: Vec<Vec<f64>>| -> Result<Vec<Individual>> {
        let results: Vec<(Vec<f64>, Result<Vec<f64>>)> = genomes
            .into_par_iter()
            .map(|g| {
                let r = eval(&decode(&g));
                (g, r)
            })
            .collect();
        let mut out = Vec::with_capacity(results.len());
        for (genes, r) in results {
            let fail = |reason: String| Error::Evaluation {
                candidate: decode(&genes),
                reason,
            };
            let objectives = r.map_err(|e| fail(e.to_string()))?;
            if objectives.is_empty() || objectives.iter().any(|v| !v.is_finite()) {
                return Err(fail(format!(
                    "objectives {objectives:?} are empty or non-finite"
                )));
            }
            let expected = *objective_count.get_or_insert(objectives.len());
            if objectives.len() != expected {
                return Err(fail(format!(
                    "{} objectives, expected {expected}",
                    objectives.len()
                )));
            }
            out.push(Individual {
                genes,
                objectives,
                rank: 0,
                crowding: 0.0,
            });
        }
        Ok(out)
    };

    let initial: Vec<Vec<f64>> = (0..config.population)
        .map(|_| (0..n).map(|_| rng.random::<f64>()).collect())
        .collect();
    let first = evaluate(initial)?;
    let mut evaluations = first.len();
    let sum = |ind: &Individual| ind.objectives.iter().sum::<f64>();
    let mut best = first.iter().map(sum).fold(f64::INFINITY, f64::min);
    let mut history = vec![best];
    let mut population = environmental_selection(first, config.population);

    while evaluations < config.budget {
        let count = (config.budget - evaluations).min(config.population);
        let mut children = Vec::with_capacity(count + 1);
        while children.len() < count {
            let a = tournament(&mut rng, &population);
            let b = tournament(&mut rng, &population);
            let (mut c1, mut c2) = sbx(&mut rng, &a.genes, &b.genes, config);
            polynomial_mutation(&mut rng, &mut c1, mutation_probability, config.mutation_eta);
            polynomial_mutation(&mut rng, &mut c2, mutation_probability, config.mutation_eta);
            children.push(c1);
            children.push(c2);
        }
        children.truncate(count);
        let offspring = evaluate(children)?;
        evaluations += offspring.len();
        best = offspring.iter().map(sum).fold(best, f64::min);
        history.push(best);
        population.extend(offspring);
        population = environmental_selection(population, config.population);
    }

    let members = population
        .into_iter()
        .map(|ind| FrontMember {
            params: decode(&ind.genes),
            objectives: ind.objectives,
            rank: ind.rank,
            crowding: ind.crowding,
        })
        .collect();
    Ok(ParetoFront {
        members,
        evaluations,
        best_sum_history: history,
    })
}

/// Lowest objective sum; ties go to the lower worst objective, then to the
/// lexicographically smaller parameter vector.
pub fn select_candidate(front: &ParetoFront) -> Result<&FrontMember> {
    let max = |m: &FrontMember| {
        m.objectives
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    };
    front
        .members
        .iter()
        .min_by(|a, b| {
            a.objective_sum()
                .total_cmp(&b.objective_sum())
                .then(max(a).total_cmp(&max(b)))
                .then_with(|| {
                    a.params
                        .iter()
                        .zip(&b.params)
                        .map(|(x, y)| x.total_cmp(y))
                        .find(|o| o.is_ne())
                        .unwrap_or(std::cmp::Ordering::Equal)
                })
        })
        .ok_or(Error::EmptyFront)
}

/// Runs NSGA-II for one afferent type against `observed`.
pub fn fit_afferent(
    problem: &FitProblem<'_>,
    space: &ParameterSpace,
    config: &Nsga2Config,
    seed: u64,
) -> Result<ParetoFront> {
    space.validate()?;
    if space.afferent != problem.base().afferent {
        return Err(Error::AfferentMismatch {
            expected: problem.base().afferent.to_string(),
            got: space.afferent.to_string(),
        });
    }
    let afferent = space.afferent;
    nsga2(
        |values| {
            let candidate = CandidateVector {
                afferent,
                values: values.to_vec(),
            };
            Ok(problem.evaluate(&candidate)?.to_vec())
        },
        &space.bounds,
        config,
        seed,
    )
}

#[derive(Debug, Clone)]
pub struct Recovery {
    pub selected: CandidateVector,
    pub objective_sum: f64,
    pub observed: ObservedRateSet,
    pub front: ParetoFront,
}

/// Fits parameters against rates synthesized from `ground_truth` on `bank`.
pub fn recover_parameters(
    ground_truth: &AfferentParams,
    bank: &StressBank,
    space: &ParameterSpace,
    config: &Nsga2Config,
    seed: u64,
) -> Result<Recovery> {
    let observed = synthesize_observed(bank, ground_truth)?;
    let problem = FitProblem::new(bank, &observed, ground_truth.clone())?;
    let front = fit_afferent(&problem, space, config, seed)?;
    let best = select_candidate(&front)?;
    let selected = CandidateVector {
        afferent: space.afferent,
        values: best.params.clone(),
    };
    let objective_sum = best.objective_sum();
    Ok(Recovery {
        selected,
        objective_sum,
        observed,
        front,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn member(objectives: &[f64], params: &[f64]) -> FrontMember {
        FrontMember {
            params: params.to_vec(),
            objectives: objectives.to_vec(),
            rank: 0,
            crowding: 0.0,
        }
    }

    fn front(members: Vec<FrontMember>) -> ParetoFront {
        ParetoFront {
            members,
            evaluations: 0,
            best_sum_history: vec![],
        }
    }

    #[test]
    fn selection_prefers_lower_sum() {
        let f = front(vec![
            member(&[1.0, 1.0, 1.0, 1.0], &[1.0]),
            member(&[0.0, 0.0, 0.0, 9.0], &[0.0]),
        ]);
        assert_eq!(select_candidate(&f).unwrap().params, vec![1.0]);
    }

    #[test]
    fn selection_tie_breaks_on_worst_objective() {
        let f = front(vec![
            member(&[3.0, 1.0, 0.0, 0.0], &[0.0]),
            member(&[2.0, 2.0, 0.0, 0.0], &[1.0]),
        ]);
        assert_eq!(select_candidate(&f).unwrap().params, vec![1.0]);
    }

    #[test]
    fn empty_front_rejected() {
        assert!(matches!(
            select_candidate(&front(vec![])),
            Err(Error::EmptyFront)
        ));
    }

    #[test]
    fn constant_offset_objectives() {
        let rows: Vec<(f64, f64, f64)> = FREQUENCIES_HZ
            .iter()
            .flat_map(|&f| (0..3).map(move |k| (f, 10.0 * k as f64 + 10.0, 10.0 * k as f64)))
            .collect();
        assert_eq!(objective_vector(&rows), [100.0; 4]);
    }

    #[test]
    fn bounds_round_trip() {
        for b in [Bound::linear(1.0, 2000.0), Bound::log(1.0, 1e6)] {
            for v in [1.0, 17.5, 1999.0] {
                assert!((b.from_unit(b.to_unit(v)) - v).abs() < 1e-9 * v);
            }
        }
    }

    #[test]
    fn one_member_population_rejected() {
        let cfg = Nsga2Config {
            population: 1,
            budget: 10,
            ..Nsga2Config::default()
        };
        let r = nsga2(
            |x| Ok(vec![x[0], -x[0]]),
            &[Bound::linear(0.0, 1.0)],
            &cfg,
            0,
        );
        assert!(matches!(r, Err(Error::Validation { .. })));
    }

    #[test]
    fn small_run_completes() {
        let cfg = Nsga2Config {
            population: 4,
            budget: 8,
            ..Nsga2Config::default()
        };
        let f = nsga2(
            |x| Ok(vec![x[0], 1.0 - x[0]]),
            &[Bound::linear(0.0, 1.0)],
            &cfg,
            3,
        )
        .unwrap();
        assert_eq!(f.evaluations, 8);
        assert_eq!(f.members.len(), 4);
    }

    #[test]
    fn failing_evaluation_echoes_candidate() {
        let cfg = Nsga2Config {
            population: 4,
            budget: 8,
            ..Nsga2Config::default()
        };
        let err = nsga2(
            |_| Err(Error::EmptyFront),
            &[Bound::linear(0.0, 1.0)],
            &cfg,
            3,
        )
        .unwrap_err();
        match err {
            Error::Evaluation { candidate, .. } => assert_eq!(candidate.len(), 1),
            other => panic!("{other}"),
        }
    }
}
