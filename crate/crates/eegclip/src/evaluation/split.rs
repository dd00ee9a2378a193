//! Split planning over recording ids.
//!
//! Splits operate on whole recordings, never on windows, so every window of
//! a recording lands on the same side. A plan is a pure function of the id
//! set, the mode, the fraction list, and the seed: ids are sorted before any
//! shuffle, so input order cannot leak into the result.

use std::collections::HashSet;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::util::derive_seed;
use crate::{Error, Result};

/// Training-set fraction for a few-shot cell, kept as an exact rational so
/// `1/50` formats back as written.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Fraction {
    num: u32,
    den: u32,
}

impl Fraction {
    /// Requires `1 <= num <= den`.
    pub fn new(num: u32, den: u32) -> Result<Fraction> {
        if num == 0 || den == 0 || num > den {
            return Err(Error::validation(format!(
                "fraction {num}/{den} is not in (0, 1]"
            )));
        }
        Ok(Fraction { num, den })
    }

    pub fn num(self) -> u32 {
        self.num
    }

    pub fn den(self) -> u32 {
        self.den
    }

    pub fn value(self) -> f64 {
        f64::from(self.num) / f64::from(self.den)
    }

    /// Parses `"num/den"`; a bare integer means a whole fraction `n/1`.
    pub fn parse(text: &str) -> Result<Fraction> {
        let bad = |_| Error::validation(format!("bad fraction {text:?}, expected num/den"));
        match text.split_once('/') {
            Some((n, d)) => {
                Fraction::new(n.trim().parse().map_err(bad)?, d.trim().parse().map_err(bad)?)
            }
            None => Fraction::new(text.trim().parse().map_err(bad)?, 1),
        }
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

/// The few-shot training fractions reported in the sweep figures.
pub const DEFAULT_FRACTIONS: [Fraction; 5] = [
    Fraction { num: 1, den: 2 },
    Fraction { num: 1, den: 5 },
    Fraction { num: 1, den: 10 },
    Fraction { num: 1, den: 20 },
    Fraction { num: 1, den: 50 },
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode {
    /// One 80/20 train/eval cut; the contrastive and task training sets are
    /// the same recordings.
    Standard,
    /// 60% contrastive pretraining, 20% task training, 20% evaluation, with
    /// the task-train slice feeding the nested fraction subsets.
    FewShot,
}

impl SplitMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitMode::Standard => "standard",
            SplitMode::FewShot => "fewshot",
        }
    }

    pub fn parse(text: &str) -> Result<SplitMode> {
        match text {
            "standard" => Ok(SplitMode::Standard),
            "fewshot" => Ok(SplitMode::FewShot),
            other => Err(Error::validation(format!("unknown split mode {other:?}"))),
        }
    }
}

impl fmt::Display for SplitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A reproducible assignment of recording ids to evaluation roles.
///
/// `task_train` is deliberately ordered: every fraction subset is a prefix
/// of it, which makes the subsets nested by construction. The other two
/// sets are sorted and carry no meaningful order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    pub mode: SplitMode,
    pub seed: u64,
    pub contrastive_train: Vec<String>,
    pub task_train: Vec<String>,
    pub eval: Vec<String>,
    /// Largest fraction first; each id list is a prefix of `task_train`.
    pub fraction_subsets: Vec<(Fraction, Vec<String>)>,
}

impl SplitPlan {
    pub fn fractions(&self) -> Vec<Fraction> {
        self.fraction_subsets.iter().map(|(f, _)| *f).collect()
    }

    pub fn subset_for(&self, fraction: Fraction) -> Option<&[String]> {
        self.fraction_subsets
            .iter()
            .find(|(f, _)| *f == fraction)
            .map(|(_, ids)| ids.as_slice())
    }

    /// Structural invariants: non-empty roles for the mode, pairwise
    /// disjoint sets, and fraction subsets that are nested prefixes of the
    /// task-train order.
    pub fn validate(&self) -> Result<()> {
        for (name, ids) in [
            ("contrastive_train", &self.contrastive_train),
            ("task_train", &self.task_train),
            ("eval", &self.eval),
        ] {
            if ids.is_empty() {
                return Err(Error::validation(format!(
                    "split leaves the {name} set empty; too few recordings"
                )));
            }
            let unique: HashSet<&String> = ids.iter().collect();
            if unique.len() != ids.len() {
                return Err(Error::validation(format!("duplicate id in {name} set")));
            }
        }
        let task: HashSet<&String> = self.task_train.iter().collect();
        let eval: HashSet<&String> = self.eval.iter().collect();
        match self.mode {
            SplitMode::Standard => {
                let contrastive: HashSet<&String> = self.contrastive_train.iter().collect();
                if contrastive != task {
                    return Err(Error::validation(
                        "standard mode trains the contrastive and task stages on the same ids",
                    ));
                }
            }
            SplitMode::FewShot => {
                for id in &self.contrastive_train {
                    if task.contains(id) || eval.contains(id) {
                        return Err(Error::validation(format!(
                            "id {id} appears in more than one split role"
                        )));
                    }
                }
            }
        }
        for id in &self.task_train {
            if eval.contains(id) {
                return Err(Error::validation(format!(
                    "id {id} appears in both task_train and eval"
                )));
            }
        }
        let mut last_value = f64::INFINITY;
        let mut last_len = self.task_train.len();
        for (fraction, ids) in &self.fraction_subsets {
            if fraction.value() >= last_value {
                return Err(Error::validation(
                    "fraction subsets must be ordered by strictly decreasing fraction",
                ));
            }
            if ids.is_empty() || ids.len() > last_len {
                return Err(Error::validation(format!(
                    "subset for {fraction} breaks nesting"
                )));
            }
            if ids.as_slice() != &self.task_train[..ids.len()] {
                return Err(Error::validation(format!(
                    "subset for {fraction} is not a prefix of task_train"
                )));
            }
            last_value = fraction.value();
            last_len = ids.len();
        }
        Ok(())
    }
}

/// Strata in a fixed order: flag false, flag true, unlabeled.
fn stratify(ids: &[(String, Option<bool>)]) -> [Vec<String>; 3] {
    let mut strata = [Vec::new(), Vec::new(), Vec::new()];
    for (id, flag) in ids {
        let slot = match flag {
            Some(false) => 0,
            Some(true) => 1,
            None => 2,
        };
        strata[slot].push(id.clone());
    }
    strata
}

/// `max(1, round(n * f))`, capped at n.
fn subset_len(n: usize, fraction: Fraction) -> usize {
    ((n as f64 * fraction.value()).round() as usize).clamp(1, n)
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Plans a split over `ids`, each paired with the pathology flag used for
/// stratification when known. The plan depends only on the id/flag set,
/// `mode`, `fractions`, and `seed`, never on input order.
pub fn make_split_plan(
    ids: &[(String, Option<bool>)],
    mode: SplitMode,
    fractions: &[Fraction],
    seed: u64,
) -> Result<SplitPlan> {
    let mut sorted: Vec<(String, Option<bool>)> = ids.to_vec();
    sorted.sort();
    for pair in sorted.windows(2) {
        if pair[0].0 == pair[1].0 {
            return Err(Error::validation(format!(
                "duplicate recording id {:?} in split input",
                pair[0].0
            )));
        }
    }
    let mut seen = HashSet::new();
    for f in fractions {
        Fraction::new(f.num, f.den)?;
        let g = gcd(f.num, f.den);
        if !seen.insert((f.num / g, f.den / g)) {
            return Err(Error::validation(format!("duplicate fraction {f}")));
        }
    }

    let mut contrastive = Vec::new();
    let mut task_queues: Vec<Vec<String>> = Vec::new();
    let mut eval = Vec::new();
    for (slot, stratum) in stratify(&sorted).into_iter().enumerate() {
        let mut stratum = stratum;
        let n = stratum.len();
        if n == 0 {
            task_queues.push(Vec::new());
            continue;
        }
        let tag = ["neg", "pos", "unlabeled"][slot];
        let mut rng =
            ChaCha12Rng::seed_from_u64(derive_seed(seed, &format!("split/stratum/{tag}")));
        stratum.shuffle(&mut rng);
        let (n_train, n_task) = match mode {
            SplitMode::Standard => {
                let n_eval = (n as f64 * 0.2).round() as usize;
                (n - n_eval, 0)
            }
            SplitMode::FewShot => {
                let n_c = (n as f64 * 0.6).round() as usize;
                let n_t = ((n as f64 * 0.2).round() as usize).min(n - n_c);
                (n_c, n_t)
            }
        };
        contrastive.extend_from_slice(&stratum[..n_train]);
        task_queues.push(stratum[n_train..n_train + n_task].to_vec());
        eval.extend_from_slice(&stratum[n_train + n_task..]);
    }

    // Round-robin across strata so small prefix subsets stay class-balanced.
    let mut task_train = Vec::new();
    let longest = task_queues.iter().map(Vec::len).max().unwrap_or(0);
    for i in 0..longest {
        for queue in &task_queues {
            if let Some(id) = queue.get(i) {
                task_train.push(id.clone());
            }
        }
    }
    if mode == SplitMode::Standard {
        task_train = contrastive.clone();
        let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, "split/task_order"));
        task_train.shuffle(&mut rng);
    }

    contrastive.sort();
    eval.sort();
    finish_plan(mode, seed, contrastive, task_train, eval, fractions)
}

/// Builds a standard-mode plan from an externally supplied train/eval
/// partition, as when a dataset manifest carries split hints. Fraction
/// subsets still come from a seeded shuffle of the train ids.
pub fn standard_plan_from_sets(
    train: &[String],
    eval: &[String],
    fractions: &[Fraction],
    seed: u64,
) -> Result<SplitPlan> {
    let mut task_train = train.to_vec();
    task_train.sort();
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, "split/task_order"));
    task_train.shuffle(&mut rng);
    let mut contrastive = train.to_vec();
    contrastive.sort();
    let mut eval = eval.to_vec();
    eval.sort();
    finish_plan(
        SplitMode::Standard,
        seed,
        contrastive,
        task_train,
        eval,
        fractions,
    )
}

fn finish_plan(
    mode: SplitMode,
    seed: u64,
    contrastive: Vec<String>,
    task_train: Vec<String>,
    eval: Vec<String>,
    fractions: &[Fraction],
) -> Result<SplitPlan> {
    if contrastive.is_empty() || task_train.is_empty() || eval.is_empty() {
        return Err(Error::validation(
            "too few recordings for the requested split",
        ));
    }
    let mut fractions: Vec<Fraction> = fractions.to_vec();
    fractions.sort_by(|a, b| b.value().partial_cmp(&a.value()).expect("finite"));
    let fraction_subsets = fractions
        .into_iter()
        .map(|f| (f, task_train[..subset_len(task_train.len(), f)].to_vec()))
        .collect();
    let plan = SplitPlan {
        mode,
        seed,
        contrastive_train: contrastive,
        task_train,
        eval,
        fraction_subsets,
    };
    plan.validate()?;
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<(String, Option<bool>)> {
        (0..n)
            .map(|i| (format!("rec{i:04}"), Some(i % 2 == 1)))
            .collect()
    }

    #[test]
    fn fewshot_splits_sixty_twenty_twenty() {
        let plan = make_split_plan(&ids(100), SplitMode::FewShot, &DEFAULT_FRACTIONS, 9).unwrap();
        assert_eq!(plan.contrastive_train.len(), 60);
        assert_eq!(plan.task_train.len(), 20);
        assert_eq!(plan.eval.len(), 20);
        let all: HashSet<String> = plan
            .contrastive_train
            .iter()
            .chain(&plan.task_train)
            .chain(&plan.eval)
            .cloned()
            .collect();
        assert_eq!(all.len(), 100);
        plan.validate().unwrap();
    }

    #[test]
    fn stratification_balances_each_role() {
        // 60 negatives, 40 positives; every role keeps the 60/40 ratio.
        let mut input = Vec::new();
        for i in 0..60 {
            input.push((format!("neg{i:03}"), Some(false)));
        }
        for i in 0..40 {
            input.push((format!("pos{i:03}"), Some(true)));
        }
        let plan = make_split_plan(&input, SplitMode::FewShot, &[], 3).unwrap();
        let positives = |ids: &[String]| ids.iter().filter(|i| i.starts_with("pos")).count();
        assert_eq!(positives(&plan.contrastive_train), 24);
        assert_eq!(positives(&plan.task_train), 8);
        assert_eq!(positives(&plan.eval), 8);
    }

    #[test]
    fn fraction_subsets_are_nested_prefixes() {
        let fractions = [Fraction::new(1, 2).unwrap(), Fraction::new(1, 10).unwrap()];
        let plan = make_split_plan(&ids(100), SplitMode::FewShot, &fractions, 5).unwrap();
        assert_eq!(plan.task_train.len(), 20);
        let half = plan.subset_for(fractions[0]).unwrap();
        let tenth = plan.subset_for(fractions[1]).unwrap();
        assert_eq!(half.len(), 10);
        assert_eq!(tenth.len(), 2);
        assert_eq!(&half[..2], tenth);
        assert_eq!(half, &plan.task_train[..10]);
        // Round-robin ordering puts one id of each class in the smallest subset.
        let classes: HashSet<bool> = tenth
            .iter()
            .map(|id| id[3..].parse::<usize>().unwrap() % 2 == 1)
            .collect();
        assert_eq!(classes.len(), 2, "smallest subset should span both classes");
    }

    #[test]
    fn plan_is_a_pure_function_of_inputs() {
        let input = ids(80);
        let a = make_split_plan(&input, SplitMode::FewShot, &DEFAULT_FRACTIONS, 11).unwrap();
        let b = make_split_plan(&input, SplitMode::FewShot, &DEFAULT_FRACTIONS, 11).unwrap();
        assert_eq!(a, b);
        let mut reversed = input.clone();
        reversed.reverse();
        let c = make_split_plan(&reversed, SplitMode::FewShot, &DEFAULT_FRACTIONS, 11).unwrap();
        assert_eq!(a, c);
        let d = make_split_plan(&input, SplitMode::FewShot, &DEFAULT_FRACTIONS, 12).unwrap();
        assert_ne!(
            a.task_train, d.task_train,
            "a different seed should move at least one id"
        );
    }

    #[test]
    fn standard_mode_shares_train_ids() {
        let plan = make_split_plan(&ids(10), SplitMode::Standard, &[], 2).unwrap();
        assert_eq!(plan.eval.len(), 2);
        assert_eq!(plan.contrastive_train.len(), 8);
        let c: HashSet<&String> = plan.contrastive_train.iter().collect();
        let t: HashSet<&String> = plan.task_train.iter().collect();
        assert_eq!(c, t);
    }

    #[test]
    fn standard_plan_accepts_external_partition() {
        let train: Vec<String> = (0..8).map(|i| format!("t{i}")).collect();
        let eval: Vec<String> = (0..3).map(|i| format!("e{i}")).collect();
        let plan =
            standard_plan_from_sets(&train, &eval, &[Fraction::new(1, 2).unwrap()], 4).unwrap();
        plan.validate().unwrap();
        assert_eq!(plan.subset_for(Fraction::new(1, 2).unwrap()).unwrap().len(), 4);
        let overlap = standard_plan_from_sets(&train, &train[..1].to_vec(), &[], 4);
        assert!(overlap.is_err());
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        assert!(make_split_plan(&[], SplitMode::FewShot, &[], 0).is_err());
        assert!(make_split_plan(&ids(2), SplitMode::FewShot, &[], 0).is_err());
        let mut dup = ids(10);
        dup.push(dup[0].clone());
        assert!(make_split_plan(&dup, SplitMode::FewShot, &[], 0).is_err());
        let twice = [Fraction::new(1, 2).unwrap(), Fraction::new(1, 2).unwrap()];
        assert!(make_split_plan(&ids(20), SplitMode::FewShot, &twice, 0).is_err());
        assert!(Fraction::new(0, 5).is_err());
        assert!(Fraction::new(3, 2).is_err());
        assert!(Fraction::new(1, 1).is_ok());
    }

    #[test]
    fn fraction_parse_round_trips() {
        let f = Fraction::parse("1/50").unwrap();
        assert_eq!(f.to_string(), "1/50");
        assert_eq!(Fraction::parse("1").unwrap(), Fraction::new(1, 1).unwrap());
        assert!(Fraction::parse("0/3").is_err());
        assert!(Fraction::parse("a/b").is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn plans_hold_invariants_over_random_corpora(
            n in 50usize..=500,
            labeled in proptest::collection::vec(proptest::option::of(any::<bool>()), 500),
            seed in any::<u64>(),
        ) {
            let input: Vec<(String, Option<bool>)> = (0..n)
                .map(|i| (format!("r{i:05}"), labeled[i]))
                .collect();
            let plan = make_split_plan(&input, SplitMode::FewShot, &DEFAULT_FRACTIONS, seed).unwrap();
            plan.validate().unwrap();
            // Roles partition the corpus.
            let mut union: Vec<&String> = plan.contrastive_train.iter()
                .chain(&plan.task_train)
                .chain(&plan.eval)
                .collect();
            union.sort();
            union.dedup();
            prop_assert_eq!(union.len(), n);
            // Proportions are 60/20/20 up to per-stratum rounding.
            let share = plan.contrastive_train.len() as f64 / n as f64;
            prop_assert!((share - 0.6).abs() < 0.05);
            // Subsets nest and match the size formula.
            for (fraction, subset) in &plan.fraction_subsets {
                let want = ((plan.task_train.len() as f64 * fraction.value()).round() as usize)
                    .clamp(1, plan.task_train.len());
                prop_assert_eq!(subset.len(), want);
                prop_assert_eq!(subset.as_slice(), &plan.task_train[..subset.len()]);
            }
        }
    }
}
