//! Budgeted bit allocation: find per-layer stage depths `n` minimizing
//! validation cross-entropy `f(n)` subject to the cost-model constraint
//! `B = Σ (N_i + 2b)·n_i <= µ`.
//!
//! Three strategies share one oracle interface: exhaustive grid search (small
//! boxes only), uniform random search over feasible configurations (the
//! baseline), and backward greedy search, which starts from the initial
//! high-rate quantization and repeatedly removes the bit with the best
//! loss-change-per-bit ratio until the budget is met.
//!
//! The oracle is pure and memoized; candidate evaluations inside one search
//! step run in parallel, and results are reduced by an explicit tie-break
//! rule, so parallelism never changes the outcome. Evaluation indices are
//! assigned in a deterministic recording pass, which keeps exported traces
//! byte-identical across runs.

use std::collections::{HashMap, HashSet};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::hquant::StageStack;
use crate::nn::{cross_entropy, forward, NetworkModel};
use crate::scalar::Real;
use crate::tensor::Tensor;
use crate::STORED_BITS;

/// Eq.-4 cost of an allocation: `Σ (N_i + 2b)·n_i`, exact integer arithmetic.
pub fn total_bits(allocation: &[u16], weight_counts: &[u64], stored_bits: u32) -> u64 {
    allocation
        .iter()
        .zip(weight_counts)
        .map(|(&n, &count)| (count + 2 * stored_bits as u64) * n as u64)
        .sum()
}

/// A bit allocation with its cost-model size and the budget it was chosen
/// under.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitAllocation {
    pub bits: Vec<u16>,
    pub total_bits: u64,
    pub budget_bits: u64,
}

impl BitAllocation {
    pub fn new(bits: Vec<u16>, weight_counts: &[u64], budget_bits: u64) -> Self {
        let total = total_bits(&bits, weight_counts, STORED_BITS);
        Self {
            bits,
            total_bits: total,
            budget_bits,
        }
    }

    pub fn is_feasible(&self) -> bool {
        self.total_bits <= self.budget_bits
    }
}

/// One oracle evaluation: the allocation, its validation cross-entropy, and
/// the running evaluation count at the time it was first computed.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub allocation: Vec<u16>,
    pub f_value: f64,
    pub eval_index: usize,
}

/// Memo table with insert-if-absent semantics: one evaluation per distinct
/// allocation; repeats return the original result without advancing the
/// count.
pub struct Memo {
    inner: Mutex<MemoInner>,
}

#[derive(Default)]
struct MemoInner {
    results: HashMap<Vec<u16>, OracleResult>,
    costs: HashMap<Vec<u16>, f64>,
}

impl Default for Memo {
    fn default() -> Self {
        Self {
            inner: Mutex::new(MemoInner::default()),
        }
    }
}

impl Memo {
    pub fn cached_cost(&self, key: &[u16]) -> Option<f64> {
        let g = self.inner.lock().unwrap();
        g.results
            .get(key)
            .map(|r| r.f_value)
            .or_else(|| g.costs.get(key).copied())
    }

    pub fn store_cost(&self, key: &[u16], f: f64) {
        self.inner.lock().unwrap().costs.entry(key.to_vec()).or_insert(f);
    }

    pub fn record(&self, key: &[u16], compute: impl FnOnce() -> Result<f64>) -> Result<OracleResult> {
        if let Some(r) = self.inner.lock().unwrap().results.get(key) {
            return Ok(r.clone());
        }
        let f = match self.cached_cost(key) {
            Some(f) => f,
            None => compute()?,
        };
        let mut g = self.inner.lock().unwrap();
        let eval_index = g.results.len();
        let result = g
            .results
            .entry(key.to_vec())
            .or_insert(OracleResult {
                allocation: key.to_vec(),
                f_value: f,
                eval_index,
            })
            .clone();
        Ok(result)
    }

    pub fn evaluation_count(&self) -> usize {
        self.inner.lock().unwrap().results.len()
    }
}

/// What the search strategies need from a cost oracle.
pub trait Oracle: Sync {
    /// Weight counts `N_i` of the allocatable layers.
    fn weight_counts(&self) -> &[u64];
    /// Deepest available allocation (the initial quantization depths).
    fn max_depths(&self) -> &[u16];
    /// `f(n)` without recording an evaluation; memo-backed and pure.
    fn cost(&self, allocation: &[u16]) -> Result<f64>;
    /// `f(n)`, recorded: first call per allocation gets a fresh eval index.
    fn evaluate(&self, allocation: &[u16]) -> Result<OracleResult>;
}

/// The real oracle: reconstruct every layer at its allocated depth,
/// substitute into the model, and measure mean cross-entropy on a fixed
/// validation subset in fixed order.
pub struct CostOracle<S> {
    stacks: Vec<StageStack<S>>,
    model: NetworkModel<S>,
    inputs: Tensor<S>,
    labels: Vec<usize>,
    weight_counts: Vec<u64>,
    max_depths: Vec<u16>,
    memo: Memo,
    reconstructions: Mutex<HashMap<(usize, u16), std::sync::Arc<Vec<S>>>>,
}

impl<S: Real> CostOracle<S> {
    pub fn new(
        stacks: Vec<StageStack<S>>,
        model: NetworkModel<S>,
        validation: &Dataset<S>,
    ) -> Result<Self> {
        let weighted = model.weighted_layer_indices();
        if stacks.len() != weighted.len() {
            return Err(Error::InvalidAllocation(format!(
                "{} stage stacks for {} weighted layers",
                stacks.len(),
                weighted.len()
            )));
        }
        for (stack, &idx) in stacks.iter().zip(&weighted) {
            let weights = model.layers()[idx].weights().unwrap();
            if stack.layer_index != idx || stack.weight_count != weights.len() {
                return Err(Error::ShapeMismatch {
                    layer: idx,
                    detail: format!(
                        "stack (layer {}, {} weights) does not match model layer ({} weights)",
                        stack.layer_index,
                        stack.weight_count,
                        weights.len()
                    ),
                });
            }
        }
        let weight_counts = stacks.iter().map(|s| s.weight_count as u64).collect();
        let max_depths = stacks.iter().map(StageStack::depth).collect();
        Ok(Self {
            stacks,
            model,
            inputs: validation.inputs().clone(),
            labels: validation.labels().to_vec(),
            weight_counts,
            max_depths,
            memo: Memo::default(),
            reconstructions: Mutex::new(HashMap::new()),
        })
    }

    pub fn stacks(&self) -> &[StageStack<S>] {
        &self.stacks
    }

    pub fn evaluation_count(&self) -> usize {
        self.memo.evaluation_count()
    }

    fn check(&self, allocation: &[u16]) -> Result<()> {
        if allocation.len() != self.max_depths.len() {
            return Err(Error::InvalidAllocation(format!(
                "allocation has {} entries for {} layers",
                allocation.len(),
                self.max_depths.len()
            )));
        }
        for (i, (&n, &max)) in allocation.iter().zip(&self.max_depths).enumerate() {
            if n < 1 || n > max {
                return Err(Error::InvalidAllocation(format!(
                    "layer {i}: depth {n} outside 1..={max}"
                )));
            }
        }
        Ok(())
    }

    /// The compressed model at an allocation: reconstructed weights swapped
    /// into a copy of the base model (biases travel unquantized).
    pub fn assemble(&self, allocation: &[u16]) -> Result<NetworkModel<S>> {
        self.check(allocation)?;
        let mut model = self.model.clone();
        for (stack, &depth) in self.stacks.iter().zip(allocation) {
            let recon = {
                let mut cache = self.reconstructions.lock().unwrap();
                if let Some(r) = cache.get(&(stack.layer_index, depth)) {
                    r.clone()
                } else {
                    let r = std::sync::Arc::new(crate::hquant::reconstruct(stack, depth)?);
                    cache.insert((stack.layer_index, depth), r.clone());
                    r
                }
            };
            let tensor = Tensor::new(stack.original_shape.clone(), recon.as_ref().clone())?;
            *model.layer_mut(stack.layer_index).weights_mut().unwrap() = tensor;
        }
        Ok(model)
    }

    fn compute_cost(&self, allocation: &[u16]) -> Result<f64> {
        let model = self.assemble(allocation)?;
        let logits = forward(&model, &self.inputs)?;
        let loss = cross_entropy(&logits, &self.labels)?;
        Ok(loss.to_f64_())
    }
}

impl<S: Real> Oracle for CostOracle<S> {
    fn weight_counts(&self) -> &[u64] {
        &self.weight_counts
    }

    fn max_depths(&self) -> &[u16] {
        &self.max_depths
    }

    fn cost(&self, allocation: &[u16]) -> Result<f64> {
        self.check(allocation)?;
        if let Some(f) = self.memo.cached_cost(allocation) {
            return Ok(f);
        }
        let f = self.compute_cost(allocation)?;
        self.memo.store_cost(allocation, f);
        Ok(f)
    }

    fn evaluate(&self, allocation: &[u16]) -> Result<OracleResult> {
        self.check(allocation)?;
        self.memo.record(allocation, || self.compute_cost(allocation))
    }
}

// ---------------------------------------------------------------------------
// Search traces

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Greedy,
    Grid,
    Random,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Greedy => "greedy",
            Strategy::Grid => "grid",
            Strategy::Random => "random",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TracePoint {
    pub allocation: Vec<u16>,
    pub cost_bits: u64,
    pub f_value: f64,
    pub eval_index: usize,
}

/// Everything a search did: the configurations it tested, in order, and the
/// allocation it settled on.
#[derive(Debug, Clone)]
pub struct SearchTrace {
    pub strategy: Strategy,
    pub budget_bits: u64,
    /// Greedy's starting point. Its one-off evaluation is not part of
    /// `visited`: the trace counts configurations tested by the search loop.
    pub initial: Option<TracePoint>,
    /// Configurations tested, in evaluation order.
    pub visited: Vec<TracePoint>,
    pub chosen: TracePoint,
    /// Oracle evaluations spent by the search loop; equals `visited.len()`.
    pub total_evaluations: usize,
}

impl SearchTrace {
    /// CSV with columns `strategy,step,allocation,B_bits,f,eval_index`.
    /// Step 0 is the initial point when the strategy has one.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("strategy,step,allocation,B_bits,f,eval_index\n");
        let mut step = 0usize;
        let push = |step: usize, p: &TracePoint, out: &mut String| {
            let alloc = p
                .allocation
                .iter()
                .map(|n| n.to_string())
                .collect::<Vec<_>>()
                .join("-");
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                self.strategy.name(),
                step,
                alloc,
                p.cost_bits,
                p.f_value,
                p.eval_index
            ));
        };
        if let Some(initial) = &self.initial {
            push(step, initial, &mut out);
        }
        for p in &self.visited {
            step += 1;
            push(step, p, &mut out);
        }
        out
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn chosen_allocation(&self, weight_counts: &[u64]) -> BitAllocation {
        BitAllocation::new(self.chosen.allocation.clone(), weight_counts, self.budget_bits)
    }
}

/// `a` strictly better than `b`: smaller f, then smaller B, then
/// lexicographically smaller allocation.
fn better(a: &TracePoint, b: &TracePoint) -> bool {
    if a.f_value != b.f_value {
        return a.f_value < b.f_value;
    }
    if a.cost_bits != b.cost_bits {
        return a.cost_bits < b.cost_bits;
    }
    a.allocation < b.allocation
}

fn box_checks<O: Oracle>(oracle: &O, max_bits: &[u16]) -> Result<()> {
    if max_bits.len() != oracle.max_depths().len() {
        return Err(Error::InvalidAllocation(format!(
            "search box has {} entries for {} layers",
            max_bits.len(),
            oracle.max_depths().len()
        )));
    }
    for (i, (&m, &avail)) in max_bits.iter().zip(oracle.max_depths()).enumerate() {
        if m < 1 || m > avail {
            return Err(Error::InvalidAllocation(format!(
                "layer {i}: box top {m} outside 1..={avail}"
            )));
        }
    }
    Ok(())
}

fn require_feasible_floor<O: Oracle>(oracle: &O, budget_bits: u64) -> Result<u64> {
    let ones = vec![1u16; oracle.max_depths().len()];
    let min_bits = total_bits(&ones, oracle.weight_counts(), STORED_BITS);
    if min_bits > budget_bits {
        return Err(Error::InfeasibleBudget {
            budget_bits,
            min_bits,
        });
    }
    Ok(min_bits)
}

/// Evaluate candidates in parallel, then record them in order so that eval
/// indices and traces are deterministic.
fn evaluate_ordered<O: Oracle>(oracle: &O, candidates: &[Vec<u16>]) -> Result<Vec<TracePoint>> {
    candidates
        .par_iter()
        .map(|c| oracle.cost(c).map(|_| ()))
        .collect::<Result<Vec<()>>>()?;
    candidates
        .iter()
        .map(|c| {
            let r = oracle.evaluate(c)?;
            Ok(TracePoint {
                cost_bits: total_bits(c, oracle.weight_counts(), STORED_BITS),
                allocation: r.allocation,
                f_value: r.f_value,
                eval_index: r.eval_index,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Strategies

/// Exhaustively enumerate `n in [1..=max_i]^L`, skip configurations that
/// violate the bit constraint, and return the global minimizer of `f`.
/// Refuses boxes larger than `cap` configurations.
pub fn grid_search<O: Oracle>(
    oracle: &O,
    budget_bits: u64,
    max_bits: &[u16],
    cap: u128,
) -> Result<SearchTrace> {
    box_checks(oracle, max_bits)?;
    let configs: u128 = max_bits
        .iter()
        .map(|&m| m as u128)
        .product();
    if configs > cap {
        return Err(Error::GridCapExceeded { configs, cap });
    }
    require_feasible_floor(oracle, budget_bits)?;

    let mut feasible = Vec::new();
    let mut current = vec![1u16; max_bits.len()];
    loop {
        if total_bits(&current, oracle.weight_counts(), STORED_BITS) <= budget_bits {
            feasible.push(current.clone());
        }
        // odometer, last layer fastest: ascending lexicographic order
        let mut pos = current.len();
        loop {
            if pos == 0 {
                break;
            }
            pos -= 1;
            if current[pos] < max_bits[pos] {
                current[pos] += 1;
                break;
            }
            current[pos] = 1;
            if pos == 0 {
                break;
            }
        }
        if current.iter().all(|&n| n == 1) {
            break;
        }
    }

    let visited = evaluate_ordered(oracle, &feasible)?;
    let chosen = visited
        .iter()
        .fold(None::<&TracePoint>, |best, p| match best {
            Some(b) if !better(p, b) => Some(b),
            _ => Some(p),
        })
        .expect("feasible floor guarantees at least one configuration")
        .clone();
    assert!(chosen.cost_bits <= budget_bits);
    Ok(SearchTrace {
        strategy: Strategy::Grid,
        budget_bits,
        initial: None,
        visited: visited.clone(),
        chosen,
        total_evaluations: visited.len(),
    })
}

const STALL_LIMIT: u64 = 1_000_000;

/// Uniform rejection sampling over the integer box, keeping feasible
/// configurations until `count` distinct ones have been evaluated.
/// Deterministic given the seed. Draws that are infeasible or already seen
/// count toward the stall limit.
pub fn random_search<O: Oracle>(
    oracle: &O,
    budget_bits: u64,
    max_bits: &[u16],
    count: usize,
    seed: u64,
) -> Result<SearchTrace> {
    box_checks(oracle, max_bits)?;
    if count < 1 {
        return Err(Error::InvalidConfig("random search needs count >= 1".into()));
    }
    require_feasible_floor(oracle, budget_bits)?;

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut picks = Vec::with_capacity(count);
    let mut consecutive_rejects = 0u64;
    while picks.len() < count {
        let candidate: Vec<u16> = max_bits.iter().map(|&m| rng.gen_range(1..=m)).collect();
        let feasible =
            total_bits(&candidate, oracle.weight_counts(), STORED_BITS) <= budget_bits;
        if feasible && seen.insert(candidate.clone()) {
            picks.push(candidate);
            consecutive_rejects = 0;
        } else {
            consecutive_rejects += 1;
            if consecutive_rejects >= STALL_LIMIT {
                return Err(Error::RejectionStall {
                    attempts: consecutive_rejects,
                });
            }
        }
    }

    let visited = evaluate_ordered(oracle, &picks)?;
    let chosen = visited
        .iter()
        .fold(None::<&TracePoint>, |best, p| match best {
            Some(b) if !better(p, b) => Some(b),
            _ => Some(p),
        })
        .expect("count >= 1")
        .clone();
    assert!(chosen.cost_bits <= budget_bits);
    Ok(SearchTrace {
        strategy: Strategy::Random,
        budget_bits,
        initial: None,
        visited: visited.clone(),
        chosen,
        total_evaluations: visited.len(),
    })
}

/// Backward greedy search: start from the initial quantization depths and,
/// while over budget, drop the one bit whose loss-change-per-bit ratio
/// `(f(n^{t,j}) - f(n^t)) / (B^{t,j} - B^t)` is maximal. Ratio ties prefer
/// the larger bit saving `N_j + 2b`, then the smaller layer index.
pub fn backward_greedy<O: Oracle>(oracle: &O, budget_bits: u64) -> Result<SearchTrace> {
    let weight_counts = oracle.weight_counts().to_vec();
    let ones = vec![1u16; weight_counts.len()];
    let min_bits = total_bits(&ones, &weight_counts, STORED_BITS);
    if min_bits > budget_bits {
        return Err(Error::BudgetUnreachable {
            budget_bits,
            min_bits,
        });
    }

    let mut current = oracle.max_depths().to_vec();
    let mut current_bits = total_bits(&current, &weight_counts, STORED_BITS);
    let start = oracle.evaluate(&current)?;
    let mut current_f = start.f_value;
    let initial = TracePoint {
        allocation: current.clone(),
        cost_bits: current_bits,
        f_value: current_f,
        eval_index: start.eval_index,
    };

    let mut visited = Vec::new();
    let mut chosen = initial.clone();
    while current_bits > budget_bits {
        let candidates: Vec<Vec<u16>> = (0..current.len())
            .filter(|&j| current[j] > 1)
            .map(|j| {
                let mut c = current.clone();
                c[j] -= 1;
                c
            })
            .collect();
        if candidates.is_empty() {
            return Err(Error::BudgetUnreachable {
                budget_bits,
                min_bits: current_bits,
            });
        }
        let points = evaluate_ordered(oracle, &candidates)?;

        let mut best: Option<(f64, u64, TracePoint)> = None;
        for p in &points {
            let saving = current_bits - p.cost_bits; // N_j + 2b
            let ratio = (p.f_value - current_f) / (p.cost_bits as f64 - current_bits as f64);
            let replace = match &best {
                None => true,
                Some((br, bs, _)) => {
                    ratio > *br || (ratio == *br && saving > *bs)
                }
            };
            if replace {
                best = Some((ratio, saving, p.clone()));
            }
        }
        let (_, _, winner) = best.unwrap();
        debug_assert!(winner.cost_bits < current_bits);
        visited.extend(points);
        current = winner.allocation.clone();
        current_bits = winner.cost_bits;
        current_f = winner.f_value;
        chosen = winner;
    }

    assert!(chosen.cost_bits <= budget_bits);
    let total_evaluations = visited.len();
    Ok(SearchTrace {
        strategy: Strategy::Greedy,
        budget_bits,
        initial: Some(initial),
        visited,
        chosen,
        total_evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthesize_images;
    use crate::hquant::quantize_model;
    use crate::toy::lenet_shaped;

    /// Lookup-table oracle for search-behavior tests.
    struct TableOracle {
        table: HashMap<Vec<u16>, f64>,
        weight_counts: Vec<u64>,
        max_depths: Vec<u16>,
        memo: Memo,
    }

    impl TableOracle {
        fn new(weight_counts: Vec<u64>, max_depths: Vec<u16>, entries: &[(&[u16], f64)]) -> Self {
            Self {
                table: entries
                    .iter()
                    .map(|(k, v)| (k.to_vec(), *v))
                    .collect(),
                weight_counts,
                max_depths,
                memo: Memo::default(),
            }
        }
    }

    impl Oracle for TableOracle {
        fn weight_counts(&self) -> &[u64] {
            &self.weight_counts
        }

        fn max_depths(&self) -> &[u16] {
            &self.max_depths
        }

        fn cost(&self, allocation: &[u16]) -> Result<f64> {
            self.table
                .get(allocation)
                .copied()
                .ok_or_else(|| Error::InvalidAllocation(format!("no table entry for {allocation:?}")))
        }

        fn evaluate(&self, allocation: &[u16]) -> Result<OracleResult> {
            self.memo.record(allocation, || self.cost(allocation))
        }
    }

    #[test]
    fn total_bits_hand_arithmetic() {
        // (100+64)*3 + (200+64)*2 = 1020
        assert_eq!(total_bits(&[3, 2], &[100, 200], 32), 1020);
        assert_eq!(total_bits(&[0, 0], &[100, 200], 32), 0);
        assert_eq!(
            2 * total_bits(&[3, 2], &[100, 200], 32),
            total_bits(&[6, 4], &[100, 200], 32)
        );
    }

    fn real_oracle(seed: u64) -> CostOracle<f64> {
        let model = lenet_shaped::<f64>(4, seed);
        let stacks = quantize_model(&model, &[4, 4, 3, 3]).unwrap();
        let data = synthesize_images::<f64>(seed, 64, 8, 8, 4).unwrap();
        CostOracle::new(stacks, model, &data).unwrap()
    }

    #[test]
    fn full_depth_cost_matches_direct_evaluation() {
        let oracle = real_oracle(1);
        let full = oracle.max_depths().to_vec();
        let via_oracle = oracle.cost(&full).unwrap();

        let compressed = oracle.assemble(&full).unwrap();
        let data = synthesize_images::<f64>(1, 64, 8, 8, 4).unwrap();
        let logits = forward(&compressed, data.inputs()).unwrap();
        let direct = cross_entropy(&logits, data.labels()).unwrap();
        assert!((via_oracle - direct).abs() <= 1e-12);
    }

    #[test]
    fn memoization_returns_identical_results_and_counts_once() {
        let oracle = real_oracle(2);
        let alloc = vec![2, 3, 1, 2];
        let a = oracle.evaluate(&alloc).unwrap();
        let b = oracle.evaluate(&alloc).unwrap();
        assert_eq!(a, b);
        assert_eq!(oracle.evaluation_count(), 1);
    }

    #[test]
    fn lossless_stacks_reproduce_the_uncompressed_loss() {
        // Two-valued weights are exactly representable by a single stage.
        let weights = Tensor::new(
            vec![3, 2],
            vec![0.25, 0.75, 0.25, 0.75, 0.25, 0.25],
        )
        .unwrap();
        let bias = Tensor::zeros(vec![3]);
        let model = NetworkModel::new(
            vec![crate::nn::Layer::dense(weights, bias).unwrap()],
            vec![2],
        )
        .unwrap();
        let data = crate::data::synthesize_dataset::<f64>(3, 30, 2, 3).unwrap();
        let stacks = quantize_model(&model, &[1]).unwrap();
        assert_eq!(stacks[0].stages[0].mse, 0.0);

        let logits = forward(&model, data.inputs()).unwrap();
        let uncompressed = cross_entropy(&logits, data.labels()).unwrap();
        let oracle = CostOracle::new(stacks, model, &data).unwrap();
        let f = oracle.cost(&[1]).unwrap();
        assert_eq!(f, uncompressed);
    }

    #[test]
    fn allocation_out_of_range_is_rejected() {
        let oracle = real_oracle(3);
        assert!(oracle.cost(&[5, 4, 3, 3]).is_err());
        assert!(oracle.cost(&[0, 4, 3, 3]).is_err());
        assert!(oracle.cost(&[4, 4, 3]).is_err());
    }

    #[test]
    fn grid_visits_exactly_the_feasible_box() {
        // L=2, box [2,2], budget admits 3 of the 4 configurations.
        let w = vec![100u64, 100];
        // B values: [1,1]=328, [1,2]=492, [2,1]=492, [2,2]=656
        let oracle = TableOracle::new(
            w,
            vec![2, 2],
            &[
                (&[1, 1], 0.9),
                (&[1, 2], 0.6),
                (&[2, 1], 0.7),
                (&[2, 2], 0.2),
            ],
        );
        let trace = grid_search(&oracle, 492, &[2, 2], 1_000_000).unwrap();
        assert_eq!(trace.total_evaluations, 3);
        assert_eq!(trace.visited.len(), 3);
        assert_eq!(trace.chosen.allocation, vec![1, 2]);
    }

    #[test]
    fn grid_returns_the_table_argmin() {
        let oracle = TableOracle::new(
            vec![10, 10],
            vec![3, 3],
            &[
                (&[1, 1], 0.9),
                (&[1, 2], 0.8),
                (&[1, 3], 0.75),
                (&[2, 1], 0.7),
                (&[2, 2], 0.3),
                (&[2, 3], 0.28),
                (&[3, 1], 0.65),
                (&[3, 2], 0.26),
                (&[3, 3], 0.1),
            ],
        );
        let trace = grid_search(&oracle, u64::MAX, &[3, 3], 1_000_000).unwrap();
        assert_eq!(trace.chosen.allocation, vec![3, 3]);
        assert_eq!(trace.total_evaluations, 9);
    }

    #[test]
    fn grid_ties_break_toward_smaller_cost_then_lex_order() {
        let oracle = TableOracle::new(
            vec![10, 20],
            vec![2, 2],
            &[
                (&[1, 1], 0.5),
                (&[1, 2], 0.5),
                (&[2, 1], 0.5),
                (&[2, 2], 0.5),
            ],
        );
        let trace = grid_search(&oracle, u64::MAX, &[2, 2], 1_000_000).unwrap();
        // all f equal: smallest B wins; B([1,1]) is the smallest
        assert_eq!(trace.chosen.allocation, vec![1, 1]);
    }

    #[test]
    fn infeasible_budget_is_refused() {
        let oracle = TableOracle::new(vec![100, 100], vec![2, 2], &[(&[1, 1], 0.9)]);
        // all-ones costs 328 bits
        assert!(matches!(
            grid_search(&oracle, 100, &[2, 2], 1_000_000),
            Err(Error::InfeasibleBudget { .. })
        ));
        assert!(matches!(
            random_search(&oracle, 100, &[2, 2], 5, 1),
            Err(Error::InfeasibleBudget { .. })
        ));
    }

    #[test]
    fn grid_cap_refuses_with_count_estimate() {
        // AlexNet-shaped box: 10^5 * 5^3 = 12.5M configurations.
        let oracle = TableOracle::new(vec![1; 8], vec![10, 10, 10, 10, 10, 5, 5, 5], &[]);
        match grid_search(&oracle, u64::MAX, &[10, 10, 10, 10, 10, 5, 5, 5], 1_000_000) {
            Err(Error::GridCapExceeded { configs, cap }) => {
                assert_eq!(configs, 12_500_000);
                assert_eq!(cap, 1_000_000);
            }
            other => panic!("expected cap refusal, got {other:?}"),
        }
    }

    #[test]
    fn random_search_is_deterministic_and_counts_distinct_configs() {
        let oracle = real_oracle(5);
        let a = random_search(&oracle, u64::MAX, &[4, 4, 3, 3], 12, 77).unwrap();
        assert_eq!(a.total_evaluations, 12);
        let distinct: HashSet<_> = a.visited.iter().map(|p| p.allocation.clone()).collect();
        assert_eq!(distinct.len(), 12);

        let oracle2 = real_oracle(5);
        let b = random_search(&oracle2, u64::MAX, &[4, 4, 3, 3], 12, 77).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
    }

    #[test]
    fn random_search_covering_the_whole_box_finds_the_grid_optimum() {
        let entries: Vec<(Vec<u16>, f64)> = (1..=3u16)
            .flat_map(|a| (1..=3u16).map(move |b| (vec![a, b], 1.0 / (a * 3 + b) as f64)))
            .collect();
        let slices: Vec<(&[u16], f64)> =
            entries.iter().map(|(k, v)| (k.as_slice(), *v)).collect();
        let grid_oracle = TableOracle::new(vec![10, 10], vec![3, 3], &slices);
        let grid = grid_search(&grid_oracle, u64::MAX, &[3, 3], 1_000_000).unwrap();

        let rand_oracle = TableOracle::new(vec![10, 10], vec![3, 3], &slices);
        // count == feasible-region size (9): sampling must exhaust the box
        let rand = random_search(&rand_oracle, u64::MAX, &[3, 3], 9, 3).unwrap();
        assert_eq!(rand.chosen.allocation, grid.chosen.allocation);
        assert_eq!(rand.chosen.f_value, grid.chosen.f_value);
    }

    #[test]
    fn greedy_first_step_drops_the_cheapest_loss_per_bit() {
        // L=2, equal layer sizes. Dropping layer 2 loses less accuracy per
        // bit, so the first step must reduce n_2. Ratios from the table:
        // candidate [1,2]: (0.50-0.20)/(B-) ; candidate [2,1]: (0.25-0.20)/(B-)
        // with equal bit savings (164 each), ratio_2 > ratio_1 in the
        // maximization sense: (0.20-0.25)/164 > (0.20-0.50)/164.
        let oracle = TableOracle::new(
            vec![100, 100],
            vec![2, 2],
            &[
                (&[2, 2], 0.20),
                (&[1, 2], 0.50),
                (&[2, 1], 0.25),
                (&[1, 1], 0.60),
            ],
        );
        let trace = backward_greedy(&oracle, 492).unwrap();
        assert_eq!(trace.chosen.allocation, vec![2, 1]);
        assert_eq!(trace.total_evaluations, 2);
        assert_eq!(trace.visited.len(), 2);
        assert_eq!(trace.initial.as_ref().unwrap().allocation, vec![2, 2]);
    }

    #[test]
    fn greedy_with_budget_already_met_does_no_iterations() {
        let oracle = TableOracle::new(vec![100, 100], vec![2, 2], &[(&[2, 2], 0.2)]);
        let trace = backward_greedy(&oracle, u64::MAX).unwrap();
        assert_eq!(trace.total_evaluations, 0);
        assert!(trace.visited.is_empty());
        assert_eq!(trace.chosen.allocation, vec![2, 2]);
        assert_eq!(trace.initial.as_ref().unwrap().allocation, vec![2, 2]);
    }

    #[test]
    fn greedy_budget_below_all_ones_is_unreachable() {
        let oracle = TableOracle::new(vec![100, 100], vec![2, 2], &[]);
        assert!(matches!(
            backward_greedy(&oracle, 100),
            Err(Error::BudgetUnreachable { .. })
        ));
    }

    #[test]
    fn greedy_budget_use_is_strictly_monotone_and_bounded() {
        let oracle = real_oracle(8);
        let initial_bits = total_bits(oracle.max_depths(), oracle.weight_counts(), 32);
        let trace = backward_greedy(&oracle, initial_bits / 2).unwrap();

        let l = oracle.max_depths().len();
        let removed: u16 = oracle
            .max_depths()
            .iter()
            .zip(&trace.chosen.allocation)
            .map(|(&a, &b)| a - b)
            .sum();
        assert!(trace.total_evaluations <= l * removed as usize);

        // B decreases strictly along the chosen path: each iteration removes
        // one bit from a nonempty layer.
        assert!(trace.chosen.cost_bits < initial_bits);
        assert!(trace.chosen.cost_bits <= initial_bits / 2);
    }

    #[test]
    fn greedy_never_beats_grid_on_the_same_instance() {
        for seed in [11, 12, 13] {
            let oracle = real_oracle(seed);
            let initial_bits = total_bits(oracle.max_depths(), oracle.weight_counts(), 32);
            for budget in [initial_bits * 9 / 10, initial_bits * 7 / 10, initial_bits / 2] {
                let greedy = backward_greedy(&oracle, budget).unwrap();
                let max_bits = oracle.max_depths().to_vec();
                let grid = grid_search(&oracle, budget, &max_bits, 1_000_000).unwrap();
                assert!(
                    greedy.chosen.f_value >= grid.chosen.f_value,
                    "greedy {} beat grid {} at budget {budget}",
                    greedy.chosen.f_value,
                    grid.chosen.f_value
                );
            }
        }
    }

    #[test]
    fn trace_csv_is_stable_and_carries_all_columns() {
        let oracle = real_oracle(21);
        let initial_bits = total_bits(oracle.max_depths(), oracle.weight_counts(), 32);
        let trace = backward_greedy(&oracle, initial_bits * 3 / 4).unwrap();
        let csv = trace.to_csv();
        let head = csv.lines().next().unwrap();
        assert_eq!(head, "strategy,step,allocation,B_bits,f,eval_index");
        assert_eq!(csv.lines().count(), 1 + 1 + trace.visited.len());
        assert!(csv.lines().nth(1).unwrap().starts_with("greedy,0,4-4-3-3,"));
    }
}
