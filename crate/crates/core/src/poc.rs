//! Contextual outcome-reward environments with a hidden gated rule target.
//!
//! A context `x ∈ {0,1}^6` is drawn uniformly; the agent then picks four
//! binary actions. The state at step `h` is `(x, a_1..a_{h-1}, h)` and the
//! single terminal reward is `gate(x) · 1[actions match the hidden rules]`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypothesis::{
    build_rule_class, Gate, HypothesisClass, PrefixState, PrefixTree, RuleDescriptor, RuleSpace,
    StageRule,
};
use crate::mdp::{ActionId, RewardMode, TabularMdp};
use crate::scalar::Scalar;

pub const CONTEXT_BITS: u32 = 6;
pub const HORIZON: usize = 4;

const fn bit(j: u32) -> u32 {
    1 << (j - 1)
}

/// `g0 = 1`, `g1 = x5 ⊕ x6`, `g2 = x1 ⊕ x3 ⊕ x5`.
pub fn standard_gates() -> Vec<Gate> {
    vec![
        Gate {
            constant: true,
            context_mask: 0,
        },
        Gate {
            constant: false,
            context_mask: bit(5) | bit(6),
        },
        Gate {
            constant: false,
            context_mask: bit(1) | bit(3) | bit(5),
        },
    ]
}

/// `u0 = x1 ⊕ x2`, `u1 = x3 ⊕ a_{h-1}`, `u2 = parity(a_1..a_{h-1}) ⊕ x4`.
pub fn standard_stage_rules() -> Vec<StageRule> {
    vec![
        StageRule {
            constant: false,
            context_mask: bit(1) | bit(2),
            last_action: false,
            prefix_parity: false,
        },
        StageRule {
            constant: false,
            context_mask: bit(3),
            last_action: true,
            prefix_parity: false,
        },
        StageRule {
            constant: false,
            context_mask: bit(4),
            last_action: false,
            prefix_parity: true,
        },
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstanceName {
    Easy,
    Hard,
}

impl InstanceName {
    pub const ALL: [InstanceName; 2] = [InstanceName::Easy, InstanceName::Hard];

    /// Hidden gate and stage rules.
    pub fn hidden(self) -> RuleDescriptor {
        match self {
            InstanceName::Easy => RuleDescriptor {
                gate: 0,
                rules: vec![0, 1, 0, 1],
            },
            InstanceName::Hard => RuleDescriptor {
                gate: 2,
                rules: vec![2, 1, 2, 1],
            },
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            InstanceName::Easy => "easy",
            InstanceName::Hard => "hard",
        }
    }
}

impl fmt::Display for InstanceName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InstanceName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "easy" => Ok(InstanceName::Easy),
            "hard" => Ok(InstanceName::Hard),
            other => Err(Error::UnknownEnvironment(other.to_string())),
        }
    }
}

/// A constructed environment together with its 243-member hypothesis class.
#[derive(Debug, Clone)]
pub struct PocInstance<T> {
    pub name: InstanceName,
    pub hidden: RuleDescriptor,
    pub mdp: TabularMdp<T>,
    pub class: HypothesisClass<T>,
    pub space: Arc<RuleSpace>,
}

impl<T: Scalar> PocInstance<T> {
    /// Id of the hidden hypothesis within `class`.
    pub fn hidden_id(&self) -> usize {
        self.class
            .find_rule(&self.hidden)
            .expect("hidden hypothesis is a class member")
    }

    pub fn tree(&self) -> PrefixTree {
        self.space.tree
    }
}

pub fn build_instance<T: Scalar>(name: InstanceName) -> PocInstance<T> {
    let tree = PrefixTree::new(CONTEXT_BITS, HORIZON);
    let class: HypothesisClass<T> = build_rule_class(tree, standard_gates(), standard_stage_rules())
        .expect("standard rule class is well formed");
    let space = Arc::clone(class.rule_space().expect("rule class"));
    let hidden = name.hidden();

    let n = tree.num_states();
    let mut transitions = Vec::with_capacity(HORIZON - 1);
    for h in 0..HORIZON - 1 {
        let mut layer = Vec::with_capacity(n * 2);
        for s in 0..n {
            let st = tree.decode(s);
            for a in 0..2 {
                // states of other layers are unreachable at this step; self-loop keeps rows valid
                let next = if st.step == h { tree.encode(tree.child(st, a)) } else { s };
                layer.push(vec![(next, T::one())]);
            }
        }
        transitions.push(layer);
    }
    let mut rewards = vec![vec![T::zero(); n * 2]; HORIZON];
    let last = HORIZON - 1;
    for s in tree.layer_offset(last)..tree.num_states() {
        for a in 0..2 {
            if space.induced_value(&hidden, last, s, a) {
                rewards[last][s * 2 + a] = T::one();
            }
        }
    }
    let p = T::one() / T::from_count(tree.num_contexts());
    let initial = (0..tree.num_contexts() as u32)
        .map(|x| {
            (
                tree.encode(PrefixState {
                    step: 0,
                    context: x,
                    prefix: 0,
                }),
                p,
            )
        })
        .collect();
    let mdp = TabularMdp::new(n, 2, HORIZON, transitions, rewards, initial, RewardMode::OutcomeOnly)
        .expect("environment is well formed");
    PocInstance {
        name,
        hidden,
        mdp,
        class,
        space,
    }
}

/// The rewarded action sequence for context `x` (meaningful when the gate is open).
pub fn target_actions<T: Scalar>(instance: &PocInstance<T>, context: u32) -> Vec<ActionId> {
    instance.space.target_actions(&instance.hidden.rules, context)
}

/// Context vector `(x1, …, x6)` packed with `x1` as the lowest bit.
pub fn pack_context(bits: [u8; 6]) -> u32 {
    bits.iter()
        .enumerate()
        .fold(0, |acc, (j, &b)| acc | (((b & 1) as u32) << j))
}
