//! Fusion-aware mixed-scheme quantization.
//!
//! Within a transformer block the attention inputs {q, k, v} admit five set
//! partitions and the MLP inputs {u, g} two; {o} and {d} stay singletons.
//! Every fused group is assigned one quantizer. For each of the ten
//! partition combinations the per-group option lists are combined by
//! min-plus convolution over cost with Pareto pruning; the union over
//! partitions is the block's exact cost/loss frontier. Because both the
//! objective and the budget are separable sums over blocks, solving the
//! one-item-per-block knapsack over these frontiers is exactly the
//! fusion-aware program.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{QpalError, Result};
use crate::mckp::{solve_classes, CatalogDocument, Class, Item, SolveOptions};
use crate::rate::LayerSpec;

/// The seven linear layers of a transformer block that take part in fusion
/// decisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Role {
    Q,
    K,
    V,
    O,
    U,
    G,
    D,
}

impl Role {
    pub const ALL: [Role; 7] = [Role::Q, Role::K, Role::V, Role::O, Role::U, Role::G, Role::D];

    pub fn name(self) -> &'static str {
        match self {
            Role::Q => "q",
            Role::K => "k",
            Role::V => "v",
            Role::O => "o",
            Role::U => "u",
            Role::G => "g",
            Role::D => "d",
        }
    }

    pub fn index(self) -> usize {
        Role::ALL.iter().position(|&r| r == self).unwrap()
    }

    pub fn from_name(name: &str) -> Option<Role> {
        Role::ALL.iter().copied().find(|r| r.name() == name)
    }
}

/// The five set partitions of {q, k, v}.
pub const ATTN_PARTITIONS: [&[&[Role]]; 5] = [
    &[&[Role::Q], &[Role::K], &[Role::V]],
    &[&[Role::Q, Role::K], &[Role::V]],
    &[&[Role::Q, Role::V], &[Role::K]],
    &[&[Role::K, Role::V], &[Role::Q]],
    &[&[Role::Q, Role::K, Role::V]],
];

/// The two set partitions of {u, g}.
pub const MLP_PARTITIONS: [&[&[Role]]; 2] =
    [&[&[Role::U], &[Role::G]], &[&[Role::U, Role::G]]];

/// Every fusible group that can appear in a block (12 in total).
pub const ALL_GROUPS: [&[Role]; 12] = [
    &[Role::Q],
    &[Role::K],
    &[Role::V],
    &[Role::Q, Role::K],
    &[Role::Q, Role::V],
    &[Role::K, Role::V],
    &[Role::Q, Role::K, Role::V],
    &[Role::O],
    &[Role::U],
    &[Role::G],
    &[Role::U, Role::G],
    &[Role::D],
];

/// One transformer block: the seven layers in [`Role::ALL`] order.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub name: String,
    pub layers: [LayerSpec; 7],
}

impl TransformerBlock {
    pub fn layer(&self, role: Role) -> &LayerSpec {
        &self.layers[role.index()]
    }
}

/// A candidate quantizer with its precomputed Gaussian distortion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizerSpec {
    pub id: String,
    pub bits: f64,
    pub err: f64,
}

/// Cost table keyed by (block-scoped group key, quantizer id).
pub type CostTable = BTreeMap<(String, String), f64>;

/// `"<block>/<m1>+<m2>"` with members in [`Role::ALL`] order.
pub fn group_key(block: &str, members: &[Role]) -> String {
    let mut sorted: Vec<Role> = members.to_vec();
    sorted.sort();
    let joined: Vec<&str> = sorted.iter().map(|r| r.name()).collect();
    format!("{block}/{}", joined.join("+"))
}

/// Data-free per-(layer, quantizer) losses: `a_l * err(Q_q)`.
pub fn data_free_losses(block: &TransformerBlock, quantizers: &[QuantizerSpec]) -> Vec<Vec<f64>> {
    Role::ALL
        .iter()
        .map(|&r| quantizers.iter().map(|q| block.layer(r).sensitivity * q.err).collect())
        .collect()
}

/// A fused group's selection within a frontier point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupChoice {
    pub members: Vec<String>,
    pub quantizer: String,
    pub bits: f64,
}

/// One non-dominated (cost, loss) point of a block, with the
/// (group, quantizer) assignment that realizes it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub cost: f64,
    pub loss: f64,
    pub groups: Vec<GroupChoice>,
}

fn choice_key(groups: &[GroupChoice]) -> String {
    groups
        .iter()
        .map(|g| format!("{}={}", g.members.join("+"), g.quantizer))
        .collect::<Vec<_>>()
        .join(";")
}

/// Keep the Pareto frontier: sorted by cost, loss strictly decreasing.
fn pareto_prune(mut points: Vec<FrontierPoint>) -> Vec<FrontierPoint> {
    points.sort_by(|a, b| {
        a.cost
            .partial_cmp(&b.cost)
            .unwrap()
            .then(a.loss.partial_cmp(&b.loss).unwrap())
            .then_with(|| choice_key(&a.groups).cmp(&choice_key(&b.groups)))
    });
    let mut kept: Vec<FrontierPoint> = Vec::new();
    for p in points {
        if kept.last().map_or(true, |last| p.loss < last.loss) {
            kept.push(p);
        }
    }
    kept
}

/// Exact cost/loss frontier of one block over all partition combinations.
/// `losses[role][q]` is the per-layer loss term; costs must cover every
/// (group, quantizer) pair that any partition can form.
pub fn build_block_frontier(
    block_name: &str,
    losses: &[Vec<f64>],
    quantizers: &[QuantizerSpec],
    cost: &CostTable,
) -> Result<Vec<FrontierPoint>> {
    if losses.len() != 7 || losses.iter().any(|l| l.len() != quantizers.len()) {
        return Err(QpalError::InvalidConfig(
            "losses must be 7 roles x quantizer count".into(),
        ));
    }
    if quantizers.is_empty() {
        return Err(QpalError::InvalidConfig("no quantizers".into()));
    }
    let mut union: Vec<FrontierPoint> = Vec::new();
    for attn in ATTN_PARTITIONS {
        for mlp in MLP_PARTITIONS {
            let mut groups: Vec<&[Role]> = Vec::new();
            groups.extend(attn.iter().copied());
            groups.push(&[Role::O]);
            groups.extend(mlp.iter().copied());
            groups.push(&[Role::D]);

            let mut acc =
                vec![FrontierPoint { cost: 0.0, loss: 0.0, groups: Vec::new() }];
            for &members in &groups {
                let key_base = group_key(block_name, members);
                let mut options = Vec::with_capacity(quantizers.len());
                for q in quantizers {
                    let c = *cost.get(&(key_base.clone(), q.id.clone())).ok_or_else(|| {
                        QpalError::MissingCost(format!("({key_base}, {})", q.id))
                    })?;
                    let l: f64 = members.iter().map(|&m| losses[m.index()]
                        [quantizers.iter().position(|qq| qq.id == q.id).unwrap()])
                        .sum();
                    options.push((
                        c,
                        l,
                        GroupChoice {
                            members: members.iter().map(|m| m.name().to_string()).collect(),
                            quantizer: q.id.clone(),
                            bits: q.bits,
                        },
                    ));
                }
                // Min-plus convolution with pruning after each group.
                let mut next = Vec::with_capacity(acc.len() * options.len());
                for base in &acc {
                    for (c, l, choice) in &options {
                        let mut groups = base.groups.clone();
                        groups.push(choice.clone());
                        next.push(FrontierPoint {
                            cost: base.cost + c,
                            loss: base.loss + l,
                            groups,
                        });
                    }
                }
                acc = pareto_prune(next);
            }
            union.extend(acc);
        }
    }
    Ok(pareto_prune(union))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockPlan {
    pub block: String,
    pub groups: Vec<GroupChoice>,
}

/// Selected (group, quantizer) pairs per block with plan totals.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FusionPlan {
    pub blocks: Vec<BlockPlan>,
    pub total_cost: f64,
    pub total_loss: f64,
    pub optimal: bool,
}

pub fn solve_fusion_msq(
    frontiers: &[(String, Vec<FrontierPoint>)],
    budget: f64,
) -> Result<FusionPlan> {
    solve_fusion_msq_with(frontiers, budget, SolveOptions::default())
}

/// Exact fusion-aware solve: one frontier point per block under the budget.
pub fn solve_fusion_msq_with(
    frontiers: &[(String, Vec<FrontierPoint>)],
    budget: f64,
    options: SolveOptions,
) -> Result<FusionPlan> {
    if frontiers.is_empty() || frontiers.iter().any(|(_, f)| f.is_empty()) {
        return Err(QpalError::InvalidConfig("every block needs a nonempty frontier".into()));
    }
    let mut total_min = 0.0;
    let mut binding = (0usize, f64::NEG_INFINITY);
    for (b, (_, f)) in frontiers.iter().enumerate() {
        let min_cost = f.iter().map(|p| p.cost).fold(f64::INFINITY, f64::min);
        total_min += min_cost;
        if min_cost > binding.1 {
            binding = (b, min_cost);
        }
    }
    if total_min > budget {
        return Err(QpalError::Infeasible(format!(
            "budget {budget} is below the sum of per-block minimum costs {total_min}; \
             binding block: {} (minimum cost {})",
            frontiers[binding.0].0, binding.1
        )));
    }

    let classes: Vec<Class> = frontiers
        .iter()
        .map(|(_, f)| Class {
            items: f
                .iter()
                .enumerate()
                .map(|(i, p)| Item { cost: p.cost, loss: p.loss, entry: i, rank: i })
                .collect(),
        })
        .collect();
    let core = solve_classes(&classes, budget, options.time_limit);
    let blocks = frontiers
        .iter()
        .zip(&core.chosen)
        .map(|((name, f), &item)| BlockPlan { block: name.clone(), groups: f[item].groups.clone() })
        .collect::<Vec<_>>();
    Ok(FusionPlan {
        blocks,
        total_cost: core.total_cost,
        total_loss: core.total_loss,
        optimal: core.optimal,
    })
}

// ---------------------------------------------------------------------------
// Cost models
// ---------------------------------------------------------------------------

/// Memory-bound synthetic cost model: moving a fused group's packed bytes
/// plus one kernel launch. Fusing `k` layers saves `(k-1) * launch_overhead`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SynthCostParams {
    pub bytes_per_sec: f64,
    pub launch_overhead: f64,
}

pub fn synth_cost_model(
    blocks: &[TransformerBlock],
    quantizers: &[QuantizerSpec],
    params: &SynthCostParams,
) -> CostTable {
    let mut table = CostTable::new();
    for block in blocks {
        for members in ALL_GROUPS {
            let key = group_key(&block.name, members);
            for q in quantizers {
                let bytes: f64 = members
                    .iter()
                    .map(|&m| q.bits * block.layer(m).size() / 8.0)
                    .sum();
                table.insert(
                    (key.clone(), q.id.clone()),
                    params.launch_overhead + bytes / params.bytes_per_sec,
                );
            }
        }
    }
    table
}

/// Read a measured cost profile: the catalog JSON schema with `layer`
/// holding the block-scoped group key (e.g. `"blk0/q+k+v"`). Units are
/// recorded verbatim.
pub fn ingest_cost_profile(path: impl AsRef<Path>) -> Result<(CostTable, Option<String>)> {
    let doc: CatalogDocument = serde_json::from_reader(std::fs::File::open(path)?)?;
    let mut table = CostTable::new();
    for opt in &doc.options {
        if !(opt.cost > 0.0) || !opt.cost.is_finite() {
            return Err(QpalError::InvalidConfig(format!(
                "cost profile entry ({}, {}) needs a positive finite cost",
                opt.layer, opt.quantizer_id
            )));
        }
        table.insert((opt.layer.clone(), opt.quantizer_id.clone()), opt.cost);
    }
    Ok((table, doc.units))
}

// ---------------------------------------------------------------------------
// Blocks document (CLI input)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerDims {
    pub d_in: u64,
    pub d_out: u64,
    pub sensitivity: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockDef {
    pub name: String,
    pub layers: BTreeMap<String, LayerDims>,
}

/// On-disk description of the fusion problem: blocks and the quantizer pool.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlocksDocument {
    pub blocks: Vec<BlockDef>,
    pub quantizers: Vec<QuantizerSpec>,
}

impl BlockDef {
    pub fn to_block(&self) -> Result<TransformerBlock> {
        let mut layers: Vec<LayerSpec> = Vec::with_capacity(7);
        for role in Role::ALL {
            let dims = self.layers.get(role.name()).ok_or_else(|| {
                QpalError::InvalidConfig(format!(
                    "block {} is missing layer '{}'",
                    self.name,
                    role.name()
                ))
            })?;
            layers.push(LayerSpec {
                name: format!("{}/{}", self.name, role.name()),
                d_in: dims.d_in,
                d_out: dims.d_out,
                sensitivity: dims.sensitivity,
            });
        }
        if self.layers.len() != 7 {
            return Err(QpalError::InvalidConfig(format!(
                "block {} has unknown layer names: expected exactly q,k,v,o,u,g,d",
                self.name
            )));
        }
        Ok(TransformerBlock { name: self.name.clone(), layers: layers.try_into().unwrap() })
    }
}
