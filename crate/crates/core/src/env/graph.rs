use std::collections::{HashMap, VecDeque};

use super::{EnvError, Environment, EvenState, OddState};

/// Default cap on the number of even states an enumeration may visit.
pub const DEFAULT_STATE_CAP: usize = 2_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeRef {
    Even(usize),
    Odd(usize),
}

/// The full even/odd graph of an enumerable environment.
///
/// Even states carry dense indices in topological order. `order` lists every
/// even and odd node once such that every policy and kernel edge points
/// forward.
#[derive(Clone, Debug)]
pub struct StateGraph {
    pub evens: Vec<EvenState>,
    pub index: HashMap<EvenState, usize>,
    pub odds: Vec<OddState>,
    /// Kernel children of each odd state: (even index, probability).
    pub odd_children: Vec<Vec<(usize, f64)>>,
    /// Odd children of each even state, in action order.
    pub even_odds: Vec<Vec<usize>>,
    pub order: Vec<NodeRef>,
    pub terminals: Vec<usize>,
}

impl StateGraph {
    pub fn even_index(&self, s: &EvenState) -> Option<usize> {
        self.index.get(s).copied()
    }

    pub fn terminal_states(&self) -> impl Iterator<Item = &EvenState> {
        self.terminals.iter().map(|&i| &self.evens[i])
    }

    pub fn non_terminal_indices(&self) -> Vec<usize> {
        (0..self.evens.len()).filter(|&i| !self.evens[i].terminal).collect()
    }
}

/// Enumerates every even and odd state reachable from the initial state.
pub fn enumerate_states(env: &dyn Environment, cap: usize) -> Result<StateGraph, EnvError> {
    match env.even_state_count() {
        Some(c) if c <= cap as u128 => {}
        Some(c) => return Err(EnvError::NotEnumerable { count: c.to_string(), cap }),
        None => return Err(EnvError::NotEnumerable { count: "overflow".into(), cap }),
    }

    let s0 = env.initial_state();
    let mut seen: HashMap<EvenState, usize> = HashMap::new();
    let mut found: Vec<EvenState> = vec![s0.clone()];
    seen.insert(s0, 0);
    let mut queue = VecDeque::from([0usize]);
    while let Some(i) = queue.pop_front() {
        let s = found[i].clone();
        if env.is_terminal(&s) {
            continue;
        }
        for a in env.valid_actions(&s) {
            for (next, _) in env.kernel_support(&s, a)? {
                if !seen.contains_key(&next) {
                    if found.len() >= cap {
                        return Err(EnvError::NotEnumerable { count: format!(">{cap}"), cap });
                    }
                    seen.insert(next.clone(), found.len());
                    found.push(next.clone());
                    queue.push_back(found.len() - 1);
                }
            }
        }
    }

    let mut evens = found;
    evens.sort_by_key(|s| env.potential(s));
    let index: HashMap<EvenState, usize> = evens.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();

    let mut odds = Vec::new();
    let mut odd_children = Vec::new();
    let mut even_odds = vec![Vec::new(); evens.len()];
    let mut order = Vec::with_capacity(evens.len() * 2);
    let mut terminals = Vec::new();

    let mut start = 0;
    while start < evens.len() {
        let level = env.potential(&evens[start]);
        let mut end = start;
        while end < evens.len() && env.potential(&evens[end]) == level {
            end += 1;
        }
        for (i, s) in evens.iter().enumerate().take(end).skip(start) {
            order.push(NodeRef::Even(i));
            if env.is_terminal(s) {
                terminals.push(i);
            }
        }
        for i in start..end {
            if env.is_terminal(&evens[i]) {
                continue;
            }
            for a in env.valid_actions(&evens[i]) {
                let children = env
                    .kernel_support(&evens[i], a)?
                    .into_iter()
                    .map(|(n, p)| (index[&n], p))
                    .collect();
                even_odds[i].push(odds.len());
                order.push(NodeRef::Odd(odds.len()));
                odds.push(OddState { even: evens[i].clone(), action: a });
                odd_children.push(children);
            }
        }
        start = end;
    }

    Ok(StateGraph { evens, index, odds, odd_children, even_odds, order, terminals })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Figure1Toy, HyperGrid, HyperGridConfig, SeqEnv};

    fn check_topological(g: &StateGraph) {
        let mut pos_even = vec![usize::MAX; g.evens.len()];
        let mut pos_odd = vec![usize::MAX; g.odds.len()];
        for (p, n) in g.order.iter().enumerate() {
            match *n {
                NodeRef::Even(i) => pos_even[i] = p,
                NodeRef::Odd(j) => pos_odd[j] = p,
            }
        }
        assert!(pos_even.iter().all(|&p| p != usize::MAX));
        assert!(pos_odd.iter().all(|&p| p != usize::MAX));
        assert_eq!(g.order.len(), g.evens.len() + g.odds.len());
        for (j, children) in g.odd_children.iter().enumerate() {
            let src = g.index[&g.odds[j].even];
            assert!(pos_even[src] < pos_odd[j]);
            for &(c, _) in children {
                assert!(pos_odd[j] < pos_even[c]);
            }
        }
    }

    #[test]
    fn figure1_graph() {
        let g = enumerate_states(&Figure1Toy::default(), DEFAULT_STATE_CAP).unwrap();
        assert_eq!(g.evens.len(), 3);
        assert_eq!(g.odds.len(), 2);
        assert_eq!(g.terminals.len(), 2);
        check_topological(&g);
    }

    #[test]
    fn hypergrid_4x4_graph() {
        let env = HyperGrid::new(HyperGridConfig { side: 4, ..Default::default() }).unwrap();
        let g = enumerate_states(&env, DEFAULT_STATE_CAP).unwrap();
        assert_eq!(g.evens.iter().filter(|s| !s.terminal).count(), 16);
        assert_eq!(g.terminals.len(), 16);
        // per cell: one odd per valid action
        let expected_odds: usize = (0..4u16)
            .flat_map(|x| (0..4u16).map(move |y| (x, y)))
            .map(|(x, y)| 1 + usize::from(x < 3) + usize::from(y < 3))
            .sum();
        assert_eq!(g.odds.len(), expected_odds);
        check_topological(&g);
    }

    #[test]
    fn long_sequences_are_not_enumerable() {
        let env = SeqEnv::with_random_modes(120, 4, 0.1, 4, 0).unwrap();
        let err = enumerate_states(&env, DEFAULT_STATE_CAP).unwrap_err();
        assert!(matches!(err, EnvError::NotEnumerable { .. }));
    }
}
