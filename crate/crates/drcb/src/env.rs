//! Contextual iterated prisoner's dilemma with parity-modulated payoffs.
//!
//! Each round is a one-shot stage game: both agents pick cooperate/defect,
//! the payoff matrix is modulated by the parity of a digit label drawn from
//! the context source. Only the label's parity is payoff-relevant; pixel
//! data never enters the simulator.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("context digit {0} out of range 0-9")]
    DigitOutOfRange(u8),
    #[error("ingested label sequence is empty")]
    EmptyLabelSequence,
}

/// One agent's move in the stage game.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    C,
    D,
}

impl Action {
    /// Index into 2-way policy logits.
    pub fn index(self) -> usize {
        match self {
            Action::C => 0,
            Action::D => 1,
        }
    }

    pub fn from_index(i: usize) -> Action {
        if i == 0 {
            Action::C
        } else {
            Action::D
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionPair {
    pub action_a: Action,
    pub action_b: Action,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Even,
    Odd,
}

/// A digit label 0-9; parity is derived, never stored, so the two can
/// never disagree.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ContextLabel {
    digit: u8,
}

impl ContextLabel {
    pub fn new(digit: u8) -> Result<Self, EnvError> {
        if digit > 9 {
            return Err(EnvError::DigitOutOfRange(digit));
        }
        Ok(ContextLabel { digit })
    }

    pub fn digit(self) -> u8 {
        self.digit
    }

    pub fn parity(self) -> Parity {
        if self.digit % 2 == 0 {
            Parity::Even
        } else {
            Parity::Odd
        }
    }
}

/// Per-round rewards; the joint reward is always the exact sum of the
/// two components by construction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardPair {
    pub reward_a: f64,
    pub reward_b: f64,
}

impl RewardPair {
    pub fn joint(self) -> f64 {
        self.reward_a + self.reward_b
    }
}

/// Stage-game payoff. Base matrix: (C,C) -> (3,3); (D,C) -> (5,-1);
/// (C,D) -> (-1,5); (D,D) -> (0,0). Under even parity, mutual cooperation
/// gains +2 per agent (-> (5,5)); the unilateral cooperator's -1 applies
/// in all contexts.
pub fn payoff(pair: ActionPair, ctx: ContextLabel) -> RewardPair {
    use Action::*;
    let (a, b) = match (pair.action_a, pair.action_b) {
        (C, C) => {
            if ctx.parity() == Parity::Even {
                (5.0, 5.0)
            } else {
                (3.0, 3.0)
            }
        }
        (D, C) => (5.0, -1.0),
        (C, D) => (-1.0, 5.0),
        (D, D) => (0.0, 0.0),
    };
    RewardPair {
        reward_a: a,
        reward_b: b,
    }
}

/// Where context labels come from. The synthetic stream draws uniformly
/// over 0-9 from the run's seeded generator; an ingested sequence is
/// replayed in order and wraps around when exhausted.
#[derive(Clone, Debug)]
pub enum ContextSource {
    Synthetic,
    Ingested { labels: Vec<u8>, pos: usize },
}

impl ContextSource {
    pub fn ingested(labels: Vec<u8>) -> Result<Self, EnvError> {
        if labels.is_empty() {
            return Err(EnvError::EmptyLabelSequence);
        }
        for &l in &labels {
            if l > 9 {
                return Err(EnvError::DigitOutOfRange(l));
            }
        }
        Ok(ContextSource::Ingested { labels, pos: 0 })
    }
}

/// Draw the next context label from the source.
pub fn next_context<R: Rng>(source: &mut ContextSource, rng: &mut R) -> ContextLabel {
    match source {
        ContextSource::Synthetic => ContextLabel {
            digit: rng.random_range(0..10u8),
        },
        ContextSource::Ingested { labels, pos } => {
            // wrap-around on exhaustion
            let digit = labels[*pos % labels.len()];
            *pos += 1;
            ContextLabel { digit }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ctx(d: u8) -> ContextLabel {
        ContextLabel::new(d).unwrap()
    }

    #[test]
    fn mutual_cooperation_even_gets_bonus() {
        let r = payoff(
            ActionPair {
                action_a: Action::C,
                action_b: Action::C,
            },
            ctx(4),
        );
        assert_eq!((r.reward_a, r.reward_b), (5.0, 5.0));
        assert_eq!(r.joint(), 10.0);
    }

    #[test]
    fn mutual_defection_odd_is_zero() {
        let r = payoff(
            ActionPair {
                action_a: Action::D,
                action_b: Action::D,
            },
            ctx(3),
        );
        assert_eq!((r.reward_a, r.reward_b), (0.0, 0.0));
        assert_eq!(r.joint(), 0.0);
    }

    #[test]
    fn unilateral_defection_even_keeps_sucker_payoff() {
        let r = payoff(
            ActionPair {
                action_a: Action::D,
                action_b: Action::C,
            },
            ctx(2),
        );
        assert_eq!((r.reward_a, r.reward_b), (5.0, -1.0));
        assert_eq!(r.joint(), 4.0);
    }

    #[test]
    fn temptation_structure_per_parity() {
        for d in 0..=9u8 {
            let c = ctx(d);
            let cc = payoff(
                ActionPair {
                    action_a: Action::C,
                    action_b: Action::C,
                },
                c,
            );
            let dc = payoff(
                ActionPair {
                    action_a: Action::D,
                    action_b: Action::C,
                },
                c,
            );
            match c.parity() {
                Parity::Odd => assert!(dc.reward_a > cc.reward_a, "temptation preserved"),
                Parity::Even => {
                    assert_eq!(cc.reward_a, 5.0);
                    assert_eq!(dc.reward_a, 5.0);
                    assert!(cc.joint() > dc.joint());
                }
            }
        }
    }

    #[test]
    fn joint_is_sum_of_components() {
        for &(a, b) in &[
            (Action::C, Action::C),
            (Action::C, Action::D),
            (Action::D, Action::C),
            (Action::D, Action::D),
        ] {
            for d in 0..=9 {
                let r = payoff(
                    ActionPair {
                        action_a: a,
                        action_b: b,
                    },
                    ctx(d),
                );
                assert_eq!(r.joint(), r.reward_a + r.reward_b);
            }
        }
    }

    #[test]
    fn synthetic_stream_is_seed_reproducible() {
        let draw = |seed: u64| -> Vec<u8> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut src = ContextSource::Synthetic;
            (0..64).map(|_| next_context(&mut src, &mut rng).digit()).collect()
        };
        assert_eq!(draw(7), draw(7));
        assert_ne!(draw(7), draw(8));
    }

    #[test]
    fn ingested_passthrough_and_wraparound() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut src = ContextSource::ingested(vec![7, 2, 2]).unwrap();
        let got: Vec<u8> = (0..3).map(|_| next_context(&mut src, &mut rng).digit()).collect();
        assert_eq!(got, vec![7, 2, 2]);

        let mut src = ContextSource::ingested(vec![7]).unwrap();
        let got: Vec<u8> = (0..2).map(|_| next_context(&mut src, &mut rng).digit()).collect();
        assert_eq!(got, vec![7, 7]);
    }

    #[test]
    fn invalid_labels_rejected() {
        assert!(ContextLabel::new(10).is_err());
        assert!(ContextSource::ingested(vec![]).is_err());
        assert!(ContextSource::ingested(vec![3, 12]).is_err());
    }

    #[test]
    fn parity_consistent_with_digit() {
        for d in 0..=9u8 {
            let expect = if d % 2 == 0 { Parity::Even } else { Parity::Odd };
            assert_eq!(ctx(d).parity(), expect);
        }
    }
}
