//! Finite Q-function classes.
//!
//! Two kinds of members are supported: explicit per-step tables, and
//! rule-induced hypotheses over a prefix-tree state space. A rule hypothesis
//! is a gate on the context plus one action rule per stage; it predicts
//! value 1 exactly on the path its rules prescribe, and only when the gate is
//! open.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{optimal_value, ActionId, QFunction, StateId, TabularMdp};
use crate::scalar::Scalar;

/// Enumeration of prefix-tree states `(x, a_1..a_h, h)` for binary contexts
/// and binary actions.
///
/// Layer `h` (zero-based) holds `2^context_bits · 2^h` states; the id is
/// `offset(h) + x · 2^h + p` where bit `i` of `p` is action `a_{i+1}` and bit
/// `j` of `x` is context coordinate `x_{j+1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefixTree {
    pub context_bits: u32,
    pub horizon: usize,
}

/// Decoded prefix-tree state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrefixState {
    pub step: usize,
    pub context: u32,
    /// Bit `i` is action `a_{i+1}`.
    pub prefix: u32,
}

impl PrefixTree {
    pub fn new(context_bits: u32, horizon: usize) -> Self {
        assert!(context_bits <= 16 && horizon <= 16, "prefix tree too large");
        PrefixTree {
            context_bits,
            horizon,
        }
    }

    pub fn num_contexts(&self) -> usize {
        1 << self.context_bits
    }

    pub fn layer_offset(&self, h: usize) -> usize {
        self.num_contexts() * ((1 << h) - 1)
    }

    pub fn layer_size(&self, h: usize) -> usize {
        self.num_contexts() << h
    }

    pub fn num_states(&self) -> usize {
        self.layer_offset(self.horizon)
    }

    pub fn encode(&self, st: PrefixState) -> StateId {
        debug_assert!(st.step < self.horizon && (st.prefix >> st.step) == 0);
        self.layer_offset(st.step) + ((st.context as usize) << st.step) + st.prefix as usize
    }

    /// Panics on ids outside the tree: those can only come from a construction bug.
    pub fn decode(&self, s: StateId) -> PrefixState {
        assert!(s < self.num_states(), "state {s} is not a prefix-tree state");
        let mut h = 0;
        while s >= self.layer_offset(h + 1) {
            h += 1;
        }
        let local = s - self.layer_offset(h);
        PrefixState {
            step: h,
            context: (local >> h) as u32,
            prefix: (local & ((1 << h) - 1)) as u32,
        }
    }

    /// Successor after playing `a` at `s`.
    pub fn child(&self, st: PrefixState, a: ActionId) -> PrefixState {
        PrefixState {
            step: st.step + 1,
            context: st.context,
            prefix: st.prefix | ((a as u32 & 1) << st.step),
        }
    }
}

fn parity(v: u32) -> bool {
    v.count_ones() % 2 == 1
}

/// Boolean gate `constant ⊕ ⊕_{j ∈ mask} x_j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gate {
    pub constant: bool,
    pub context_mask: u32,
}

impl Gate {
    pub fn eval(&self, context: u32) -> bool {
        self.constant ^ parity(context & self.context_mask)
    }
}

/// Stage action rule, affine over GF(2):
/// `constant ⊕ (context parity over mask) ⊕ [a_{h-1}] ⊕ [parity(a_1..a_{h-1})]`
/// with `a_0 := 0` and the empty parity equal to 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRule {
    pub constant: bool,
    pub context_mask: u32,
    pub last_action: bool,
    pub prefix_parity: bool,
}

impl StageRule {
    /// Action prescribed at zero-based step `h` given the first `h` actions in `prefix`.
    pub fn action(&self, h: usize, context: u32, prefix: u32) -> ActionId {
        let mut bit = self.constant ^ parity(context & self.context_mask);
        if self.last_action && h > 0 {
            bit ^= (prefix >> (h - 1)) & 1 == 1;
        }
        if self.prefix_parity {
            bit ^= parity(prefix & ((1u32 << h) - 1));
        }
        bit as ActionId
    }
}

/// Gate index plus one stage-rule index per step.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RuleDescriptor {
    pub gate: usize,
    pub rules: Vec<usize>,
}

/// Shared definition of a rule-induced class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSpace {
    pub tree: PrefixTree,
    pub gates: Vec<Gate>,
    pub stage_rules: Vec<StageRule>,
}

impl RuleSpace {
    /// Action sequence prescribed by `rules` on context `x`.
    pub fn target_actions(&self, rules: &[usize], context: u32) -> Vec<ActionId> {
        let mut prefix = 0u32;
        let mut out = Vec::with_capacity(rules.len());
        for (h, &r) in rules.iter().enumerate() {
            let a = self.stage_rules[r].action(h, context, prefix);
            prefix |= (a as u32) << h;
            out.push(a);
        }
        out
    }

    /// True when the `h` actions in `prefix` all follow `rules` on `context`.
    pub fn prefix_consistent(&self, rules: &[usize], h: usize, context: u32, prefix: u32) -> bool {
        (0..h).all(|i| {
            let a = (prefix >> i) & 1;
            self.stage_rules[rules[i]].action(i, context, prefix) as u32 == a
        })
    }

    /// Whether `s` lies at step `h` on the path `d` prescribes, with the gate open.
    /// States of other layers are never live.
    pub fn live(&self, d: &RuleDescriptor, h: usize, s: StateId) -> Option<PrefixState> {
        let st = self.tree.decode(s);
        (st.step == h
            && self.gates[d.gate].eval(st.context)
            && self.prefix_consistent(&d.rules, h, st.context, st.prefix))
        .then_some(st)
    }

    /// `gate(x) · 1[prefix consistent] · 1[a = rule_h(x, prefix)]`.
    pub fn induced_value(&self, d: &RuleDescriptor, h: usize, s: StateId, a: ActionId) -> bool {
        self.live(d, h, s)
            .is_some_and(|st| self.stage_rules[d.rules[h]].action(h, st.context, st.prefix) == a)
    }
}

/// Explicit action-value tables `[h][s * A + a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable<T> {
    pub num_actions: usize,
    pub layers: Vec<Vec<T>>,
}

impl<T: Scalar> QFunction<T> for QTable<T> {
    fn horizon(&self) -> usize {
        self.layers.len()
    }
    fn num_actions(&self) -> usize {
        self.num_actions
    }
    fn q(&self, h: usize, s: StateId, a: ActionId) -> T {
        self.layers[h][s * self.num_actions + a]
    }
}

#[derive(Debug, Clone)]
pub enum HypothesisKind<T> {
    Table(QTable<T>),
    Rule {
        descriptor: RuleDescriptor,
        space: Arc<RuleSpace>,
    },
}

/// One member `f` of a finite class.
#[derive(Debug, Clone)]
pub struct QHypothesis<T> {
    pub id: usize,
    pub kind: HypothesisKind<T>,
}

impl<T: Scalar> QHypothesis<T> {
    pub fn rule_descriptor(&self) -> Option<&RuleDescriptor> {
        match &self.kind {
            HypothesisKind::Rule { descriptor, .. } => Some(descriptor),
            HypothesisKind::Table(_) => None,
        }
    }
}

impl<T: Scalar> QFunction<T> for QHypothesis<T> {
    fn horizon(&self) -> usize {
        match &self.kind {
            HypothesisKind::Table(t) => t.layers.len(),
            HypothesisKind::Rule { space, .. } => space.tree.horizon,
        }
    }

    fn num_actions(&self) -> usize {
        match &self.kind {
            HypothesisKind::Table(t) => t.num_actions,
            HypothesisKind::Rule { .. } => 2,
        }
    }

    fn q(&self, h: usize, s: StateId, a: ActionId) -> T {
        induced_value(self, s, a, h)
    }

    fn greedy_action(&self, h: usize, s: StateId) -> ActionId {
        match &self.kind {
            // induced values are {0, 1} with at most one 1: greedy is the rule
            // action when the path is live, action 0 otherwise
            HypothesisKind::Rule { descriptor, space } => match space.live(descriptor, h, s) {
                Some(st) => space.stage_rules[descriptor.rules[h]].action(h, st.context, st.prefix),
                None => 0,
            },
            HypothesisKind::Table(_) => {
                let mut best = 0;
                let mut best_v = self.q(h, s, 0);
                for a in 1..self.num_actions() {
                    let v = self.q(h, s, a);
                    if v > best_v {
                        best = a;
                        best_v = v;
                    }
                }
                best
            }
        }
    }

    fn state_value(&self, h: usize, s: StateId) -> T {
        if h >= QFunction::horizon(self) {
            return T::zero();
        }
        match &self.kind {
            HypothesisKind::Rule { descriptor, space } => {
                if space.live(descriptor, h, s).is_some() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            HypothesisKind::Table(_) => (0..self.num_actions())
                .map(|a| self.q(h, s, a))
                .fold(T::neg_infinity(), T::max),
        }
    }
}

/// `f_h(s, a)` for any member.
pub fn induced_value<T: Scalar>(f: &QHypothesis<T>, s: StateId, a: ActionId, h: usize) -> T {
    match &f.kind {
        HypothesisKind::Table(t) => t.layers[h][s * t.num_actions + a],
        HypothesisKind::Rule { descriptor, space } => {
            if space.induced_value(descriptor, h, s, a) {
                T::one()
            } else {
                T::zero()
            }
        }
    }
}

/// Ordered finite class `F`; ids are `0..len`.
#[derive(Debug, Clone)]
pub struct HypothesisClass<T> {
    members: Vec<QHypothesis<T>>,
    /// For product classes `F_1 × ··· × F_H`: per-step candidate layers and,
    /// per member, the chosen index in each factor.
    factors: Option<ProductFactors<T>>,
    rule_space: Option<Arc<RuleSpace>>,
}

#[derive(Debug, Clone)]
pub struct ProductFactors<T> {
    pub layers: Vec<Vec<Vec<T>>>,
    pub member_index: Vec<Vec<usize>>,
}

impl<T: Scalar> HypothesisClass<T> {
    /// Joint finite class of explicit tables.
    pub fn from_tables(tables: Vec<QTable<T>>) -> Result<Self> {
        validate_tables(&tables)?;
        let members = tables
            .into_iter()
            .enumerate()
            .map(|(id, t)| QHypothesis {
                id,
                kind: HypothesisKind::Table(t),
            })
            .collect();
        Ok(HypothesisClass {
            members,
            factors: None,
            rule_space: None,
        })
    }

    /// Product class: every combination of one candidate layer per step,
    /// enumerated with step 1 most significant.
    pub fn product(num_actions: usize, layers: Vec<Vec<Vec<T>>>) -> Result<Self> {
        if layers.is_empty() || layers.iter().any(|l| l.is_empty()) {
            return Err(Error::InvalidClass("every factor needs a candidate".into()));
        }
        let mut member_index: Vec<Vec<usize>> = vec![Vec::new()];
        for factor in &layers {
            member_index = member_index
                .into_iter()
                .flat_map(|prefix| {
                    (0..factor.len()).map(move |i| {
                        let mut v = prefix.clone();
                        v.push(i);
                        v
                    })
                })
                .collect();
        }
        let tables: Vec<QTable<T>> = member_index
            .iter()
            .map(|idx| QTable {
                num_actions,
                layers: idx.iter().enumerate().map(|(h, &i)| layers[h][i].clone()).collect(),
            })
            .collect();
        let mut class = Self::from_tables(tables)?;
        class.factors = Some(ProductFactors {
            layers,
            member_index,
        });
        Ok(class)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[QHypothesis<T>] {
        &self.members
    }

    pub fn get(&self, id: usize) -> &QHypothesis<T> {
        &self.members[id]
    }

    pub fn factors(&self) -> Option<&ProductFactors<T>> {
        self.factors.as_ref()
    }

    pub fn rule_space(&self) -> Option<&Arc<RuleSpace>> {
        self.rule_space.as_ref()
    }

    pub fn horizon(&self) -> usize {
        self.members.first().map(|m| QFunction::horizon(m)).unwrap_or(0)
    }

    /// Class with the listed ids removed; remaining members are renumbered.
    pub fn without(&self, ids: &[usize]) -> Self {
        let members = self
            .members
            .iter()
            .filter(|m| !ids.contains(&m.id))
            .enumerate()
            .map(|(new_id, m)| QHypothesis {
                id: new_id,
                kind: m.kind.clone(),
            })
            .collect();
        HypothesisClass {
            members,
            factors: None,
            rule_space: self.rule_space.clone(),
        }
    }

    /// Id of the rule hypothesis with this descriptor.
    pub fn find_rule(&self, d: &RuleDescriptor) -> Option<usize> {
        self.members
            .iter()
            .find(|m| m.rule_descriptor() == Some(d))
            .map(|m| m.id)
    }
}

fn validate_tables<T: Scalar>(tables: &[QTable<T>]) -> Result<()> {
    let Some(first) = tables.first() else {
        return Err(Error::InvalidClass("class is empty".into()));
    };
    for t in tables {
        if t.layers.len() != first.layers.len() || t.num_actions != first.num_actions {
            return Err(Error::InvalidClass("members disagree on shape".into()));
        }
        if t
            .layers
            .iter()
            .flatten()
            .any(|&v| !(v >= T::zero() && v <= T::one()))
        {
            return Err(Error::InvalidClass("values must lie in [0, 1]".into()));
        }
    }
    Ok(())
}

/// Rule-induced class of size `|gates| · |rules|^H`, ordered gate-major with
/// the stage-1 rule most significant.
pub fn build_rule_class<T: Scalar>(
    tree: PrefixTree,
    gates: Vec<Gate>,
    stage_rules: Vec<StageRule>,
) -> Result<HypothesisClass<T>> {
    if gates.is_empty() || stage_rules.is_empty() || tree.horizon == 0 {
        return Err(Error::InvalidClass("need at least one gate, rule and step".into()));
    }
    let horizon = tree.horizon;
    let space = Arc::new(RuleSpace {
        tree,
        gates,
        stage_rules,
    });
    let n_rules = space.stage_rules.len();
    let per_gate = n_rules.pow(horizon as u32);
    let mut members = Vec::with_capacity(space.gates.len() * per_gate);
    for gate in 0..space.gates.len() {
        for code in 0..per_gate {
            let mut rules = vec![0; horizon];
            let mut c = code;
            for h in (0..horizon).rev() {
                rules[h] = c % n_rules;
                c /= n_rules;
            }
            members.push(QHypothesis {
                id: members.len(),
                kind: HypothesisKind::Rule {
                    descriptor: RuleDescriptor { gate, rules },
                    space: Arc::clone(&space),
                },
            });
        }
    }
    Ok(HypothesisClass {
        members,
        factors: None,
        rule_space: Some(space),
    })
}

/// Lowest id whose values match `Q★` on every reachable `(h, s, a)` within
/// `1e-10`, if any.
pub fn check_realizability<T: Scalar>(class: &HypothesisClass<T>, mdp: &TabularMdp<T>) -> Option<usize> {
    let opt = optimal_value(mdp);
    let reach = mdp.reachable_states();
    let tol = T::lit(1e-10).max(T::epsilon() * T::lit(16.0));
    class
        .members()
        .iter()
        .find(|f| {
            (0..mdp.horizon()).all(|h| {
                (0..mdp.num_states()).filter(|&s| reach[h][s]).all(|s| {
                    (0..mdp.num_actions())
                        .all(|a| (induced_value(f, s, a, h) - opt.q(h, s, a)).abs() <= tol)
                })
            })
        })
        .map(|f| f.id)
}
