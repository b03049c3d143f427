//! Breadth-first reference solver.
//!
//! Searches the exact environment dynamics for a shortest action sequence
//! that satisfies a domain's task. Used by tests as a ground-truth oracle
//! (is the task achievable from every spawn state, and within the step
//! limit?) and handy for debugging layouts. The search key omits the step
//! counter: dynamics do not depend on it.

use std::collections::{HashMap, VecDeque};

use super::{apply_dynamics, task_met, Action, DomainSpec, Heading, WorldState};

type Key = (usize, usize, Heading, bool, bool, bool, bool);

fn key(s: &WorldState) -> Key {
    (
        s.row,
        s.col,
        s.heading,
        s.carrying,
        s.door_broken,
        s.item_present,
        s.placed,
    )
}

/// Shortest action sequence from `start` to task success, ignoring the
/// step limit, or `None` if the task is unreachable.
pub fn shortest_solution(spec: &DomainSpec, start: &WorldState) -> Option<Vec<Action>> {
    if task_met(spec, start) {
        return Some(Vec::new());
    }
    let mut parents: HashMap<Key, (Key, Action)> = HashMap::new();
    let mut queue = VecDeque::new();
    parents.insert(key(start), (key(start), Action::Forward));
    queue.push_back(*start);
    while let Some(s) = queue.pop_front() {
        for action in Action::ALL {
            let next = apply_dynamics(spec, &s, action);
            let k = key(&next);
            if parents.contains_key(&k) {
                continue;
            }
            parents.insert(k, (key(&s), action));
            if task_met(spec, &next) {
                let mut path = vec![action];
                let mut cur = key(&s);
                let start_key = key(start);
                while cur != start_key {
                    let (prev, a) = parents[&cur];
                    path.push(a);
                    cur = prev;
                }
                path.reverse();
                return Some(path);
            }
            queue.push_back(next);
        }
    }
    None
}

/// Whether the task is reachable from `start` within the domain's step
/// limit.
pub fn solvable_within_limit(spec: &DomainSpec, start: &WorldState) -> bool {
    shortest_solution(spec, start).is_some_and(|path| path.len() as u32 <= spec.step_limit)
}
