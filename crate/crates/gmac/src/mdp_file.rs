//! Text format for finite MDPs.
//!
//! One directive per line, `#` comments:
//!
//! ```text
//! states 6
//! actions 1
//! gamma 1
//! terminal 5               # any number of terminal states
//! start 0                  # optional, default 0
//! transition 0 0 1 1.0     # state action next probability
//! reward 3 0 uniform -1 1  # state action law params...
//! reward 4 0 normal 0 0.01 # mean variance
//! reward 2 0 constant 0.5
//! policy 0 0 1.0           # state action probability; uniform if absent
//! ```
//!
//! Unlisted rewards are `constant 0`. `states`, `actions` and `gamma` must
//! come before any directive that refers to a state or action.

use std::path::Path;

use gmac_core::tabular::{Policy, RewardLaw, TabularMdp};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MdpFile {
    pub mdp: TabularMdp,
    pub policy: Policy,
    pub start: usize,
}

pub fn load_mdp(path: &Path) -> Result<MdpFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_mdp(&text, path)
}

pub fn parse_mdp(text: &str, origin: &Path) -> Result<MdpFile> {
    let mut states: Option<usize> = None;
    let mut actions: Option<usize> = None;
    let mut gamma: Option<f64> = None;
    let mut start = 0;
    let mut terminal = Vec::new();
    let mut transitions = Vec::new();
    let mut rewards = Vec::new();
    let mut policy = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |msg: String| Error::format(origin, format!("line {}: {msg}", i + 1));
        let mut words = line.split_whitespace();
        let directive = words.next().expect("non-empty line");
        let args: Vec<&str> = words.collect();
        let num = |k: usize| -> Result<f64> {
            let w = args.get(k).ok_or_else(|| bad(format!("'{directive}' needs more fields")))?;
            w.parse::<f64>().map_err(|_| bad(format!("'{w}' is not a number")))
        };
        let idx = |k: usize, bound: Option<usize>, what: &str| -> Result<usize> {
            let w = args.get(k).ok_or_else(|| bad(format!("'{directive}' needs more fields")))?;
            let v = w.parse::<usize>().map_err(|_| bad(format!("'{w}' is not a {what} index")))?;
            let n = bound.ok_or_else(|| bad(format!("'{directive}' before the {what} count")))?;
            if v >= n {
                return Err(bad(format!("{what} {v} out of range (count {n})")));
            }
            Ok(v)
        };
        let arity = |n: usize| -> Result<()> {
            if args.len() != n {
                return Err(bad(format!("'{directive}' takes {n} fields, got {}", args.len())));
            }
            Ok(())
        };
        match directive {
            "states" | "actions" => {
                arity(1)?;
                let n = args[0].parse::<usize>().map_err(|_| bad(format!("'{}' is not a count", args[0])))?;
                let slot = if directive == "states" { &mut states } else { &mut actions };
                if slot.replace(n).is_some() {
                    return Err(bad(format!("'{directive}' given twice")));
                }
            }
            "gamma" => {
                arity(1)?;
                gamma = Some(num(0)?);
            }
            "start" => {
                arity(1)?;
                start = idx(0, states, "state")?;
            }
            "terminal" => {
                arity(1)?;
                terminal.push(idx(0, states, "state")?);
            }
            "transition" => {
                arity(4)?;
                transitions.push((idx(0, states, "state")?, idx(1, actions, "action")?, idx(2, states, "state")?, num(3)?));
            }
            "policy" => {
                arity(3)?;
                policy.push((idx(0, states, "state")?, idx(1, actions, "action")?, num(2)?));
            }
            "reward" => {
                let (x, a) = (idx(0, states, "state")?, idx(1, actions, "action")?);
                let law = match args.get(2).copied() {
                    Some("constant") => {
                        arity(4)?;
                        RewardLaw::Constant(num(3)?)
                    }
                    Some("normal") => {
                        arity(5)?;
                        RewardLaw::Normal { mean: num(3)?, variance: num(4)? }
                    }
                    Some("uniform") => {
                        if args.len() < 4 {
                            return Err(bad("uniform needs at least one value".into()));
                        }
                        RewardLaw::Uniform((3..args.len()).map(num).collect::<Result<_>>()?)
                    }
                    other => return Err(bad(format!("unknown reward law {other:?}"))),
                };
                rewards.push((x, a, law));
            }
            other => return Err(bad(format!("unknown directive '{other}'"))),
        }
    }
    let missing = |what: &str| Error::format(origin, format!("missing '{what}'"));
    let s = states.ok_or_else(|| missing("states"))?;
    let a = actions.ok_or_else(|| missing("actions"))?;
    let gamma = gamma.ok_or_else(|| missing("gamma"))?;

    let mut p = vec![0.0; s * a * s];
    for (x, act, next, prob) in transitions {
        p[(x * a + act) * s + next] += prob;
    }
    let mut laws = vec![RewardLaw::Constant(0.0); s * a];
    for (x, act, law) in rewards {
        laws[x * a + act] = law;
    }
    let mut is_terminal = vec![false; s];
    for x in terminal {
        is_terminal[x] = true;
    }
    let mdp = TabularMdp::new(s, a, p, laws, gamma, is_terminal).map_err(|e| Error::format(origin, e.to_string()))?;

    let mut probs = vec![f64::NAN; s * a];
    for (x, act, prob) in policy {
        let row = &mut probs[x * a..(x + 1) * a];
        if row[0].is_nan() {
            row.fill(0.0);
        }
        row[act] += prob;
    }
    for row in probs.chunks_mut(a) {
        if row[0].is_nan() {
            row.fill(1.0 / a as f64);
        }
    }
    let policy = Policy::new(a, probs).map_err(|e| Error::format(origin, e.to_string()))?;
    Ok(MdpFile { mdp, policy, start })
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIVE_STATE: &str = "\
# the chain S1 -> ... -> S5 -> T
states 6
actions 1
gamma 1
terminal 5
transition 0 0 1 1
transition 1 0 2 1
transition 2 0 3 1
transition 3 0 4 1
transition 4 0 5 1
transition 5 0 5 1
reward 3 0 uniform -1 1
reward 4 0 normal 0 0.01
";

    #[test]
    fn text_five_state_matches_the_builtin() {
        let f = parse_mdp(FIVE_STATE, Path::new("m")).unwrap();
        assert_eq!(f.mdp, TabularMdp::five_state(1.0).unwrap());
        assert_eq!(f.policy, Policy::uniform(6, 1));
        assert_eq!(f.start, 0);
    }

    #[test]
    fn policy_rows_default_to_uniform() {
        let text = "states 2\nactions 2\ngamma 0.5\nterminal 1\ntransition 0 0 1 1\ntransition 0 1 1 1\npolicy 0 1 1\n";
        let f = parse_mdp(text, Path::new("m")).unwrap();
        assert_eq!(f.policy.row(0), &[0.0, 1.0]);
        assert_eq!(f.policy.row(1), &[0.5, 0.5]);
    }

    #[test]
    fn malformed_files_name_the_line() {
        for (text, needle) in [
            ("actions 1\ngamma 1\n", "states"),
            ("states 2\nactions 1\ngamma 1\ntransition 0 0 2 1\n", "line 4"),
            ("transition 0 0 1 1\n", "line 1"),
            ("states 2\nactions 1\ngamma 1\nterminal 1\ntransition 0 0 1 0.5\n", "sums"),
            ("states 2\nactions 1\ngamma 1\nreward 0 0 gamma 1 2\n", "line 4"),
            ("states 2\nactions 1\ngamma 1\njump 0\n", "unknown directive"),
            ("states 2\nstates 3\n", "twice"),
        ] {
            let err = parse_mdp(text, Path::new("m")).unwrap_err().to_string();
            assert!(err.contains(needle), "{text:?}: {err}");
        }
    }
}
