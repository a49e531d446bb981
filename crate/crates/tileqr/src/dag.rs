//! Task graph of the tile algorithm: one node per kernel invocation, edges
//! for the data dependencies, and the static critical-path priority classes
//! that drive the ready queue.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;

use crate::error::{Error, Result};
use crate::kernels::KernelKind;

/// One kernel invocation. Indices are 1-based as in the algorithm's loops:
/// `k` is the step, `i` a tile row, `j` a tile column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    /// Diagonal factorization, writes A(k,k) and T(k,k).
    Geqt2 { k: usize },
    /// Row update, reads V/T of step k, writes A(k,j).
    Larfb { k: usize, j: usize },
    /// Stacked factorization, writes A(k,k), A(i,k) and T(i,k).
    Tsqt2 { k: usize, i: usize },
    /// Trailing update, reads V/T of (i,k), writes A(k,j) and A(i,j).
    Ssrfb { k: usize, i: usize, j: usize },
}

impl Task {
    pub fn kind(&self) -> KernelKind {
        match self {
            Task::Geqt2 { .. } => KernelKind::Geqt2,
            Task::Larfb { .. } => KernelKind::Larfb,
            Task::Tsqt2 { .. } => KernelKind::Tsqt2,
            Task::Ssrfb { .. } => KernelKind::Ssrfb,
        }
    }

    pub fn step(&self) -> usize {
        match *self {
            Task::Geqt2 { k }
            | Task::Larfb { k, .. }
            | Task::Tsqt2 { k, .. }
            | Task::Ssrfb { k, .. } => k,
        }
    }

    pub fn tile_row(&self) -> Option<usize> {
        match *self {
            Task::Tsqt2 { i, .. } | Task::Ssrfb { i, .. } => Some(i),
            _ => None,
        }
    }

    pub fn tile_col(&self) -> Option<usize> {
        match *self {
            Task::Larfb { j, .. } | Task::Ssrfb { j, .. } => Some(j),
            _ => None,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Task::Geqt2 { k } => write!(f, "G({k})"),
            Task::Larfb { k, j } => write!(f, "L({k},{j})"),
            Task::Tsqt2 { k, i } => write!(f, "T({k},{i})"),
            Task::Ssrfb { k, i, j } => write!(f, "S({k},{i},{j})"),
        }
    }
}

/// Static priority class of a task: GEQT2 first, then TSQT2, LARFB and
/// SSRFB in descending order. Lower class is scheduled first.
pub fn priority_of(task: &Task) -> u8 {
    match task.kind() {
        KernelKind::Geqt2 => 0,
        KernelKind::Tsqt2 => 1,
        KernelKind::Larfb => 2,
        KernelKind::Ssrfb => 3,
    }
}

/// A memory resource a task touches. A factored diagonal tile holds two
/// independently-accessed regions, R in the upper triangle and V_kk in the
/// strict lower one, so it is modeled as two resources: LARFB reads only the
/// V region while TSQT2 rewrites only the R region, and the two may run
/// concurrently.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Resource {
    OffDiag(usize, usize),
    DiagUpper(usize),
    DiagLower(usize),
    TSlot(usize, usize),
}

fn full_tile(r: usize, c: usize, write: bool, out: &mut Vec<(Resource, bool)>) {
    if r == c {
        out.push((Resource::DiagUpper(r), write));
        out.push((Resource::DiagLower(r), write));
    } else {
        out.push((Resource::OffDiag(r, c), write));
    }
}

/// (resource, is_write) pairs of a task, derived from the kernel signatures:
/// G writes A_kk and T_kk; L reads V_kk and T_kk, writes A_kj; T writes
/// R_kk, A_ik and T_ik; S reads V_ik and T_ik, writes A_kj and A_ij.
fn accesses(task: &Task) -> Vec<(Resource, bool)> {
    let mut out = Vec::with_capacity(4);
    match *task {
        Task::Geqt2 { k } => {
            full_tile(k, k, true, &mut out);
            out.push((Resource::TSlot(k, k), true));
        }
        Task::Larfb { k, j } => {
            out.push((Resource::DiagLower(k), false));
            out.push((Resource::TSlot(k, k), false));
            full_tile(k, j, true, &mut out);
        }
        Task::Tsqt2 { k, i } => {
            out.push((Resource::DiagUpper(k), true));
            full_tile(i, k, true, &mut out);
            out.push((Resource::TSlot(i, k), true));
        }
        Task::Ssrfb { k, i, j } => {
            full_tile(i, k, false, &mut out);
            out.push((Resource::TSlot(i, k), false));
            full_tile(k, j, true, &mut out);
            full_tile(i, j, true, &mut out);
        }
    }
    out
}

/// The dependency graph for a `p x q` tile grid.
///
/// Tasks are stored in the algorithm's loop order, which is already a
/// topological order of the graph. After construction the graph is
/// immutable; scheduling keeps its own indegree counters.
#[derive(Debug, Clone)]
pub struct TaskGraph {
    p: usize,
    q: usize,
    tasks: Vec<Task>,
    ids: HashMap<Task, u32>,
    successors: Vec<Vec<u32>>,
    indegree: Vec<u32>,
}

/// Expected node count: sum over k of 1 + (q-k) + (p-k) + (p-k)(q-k).
pub fn node_count_formula(p: usize, q: usize) -> usize {
    let kmax = p.min(q);
    (1..=kmax)
        .map(|k| 1 + (q - k) + (p - k) + (p - k) * (q - k))
        .sum()
}

/// Builds the task graph of the tile algorithm for a `p x q` grid.
pub fn build_dag(p: usize, q: usize) -> Result<TaskGraph> {
    if p == 0 || q == 0 {
        return Err(Error::invalid("tile grid must be at least 1 x 1"));
    }
    let kmax = p.min(q);
    let mut tasks = Vec::with_capacity(node_count_formula(p, q));
    for k in 1..=kmax {
        tasks.push(Task::Geqt2 { k });
        for j in k + 1..=q {
            tasks.push(Task::Larfb { k, j });
        }
        for i in k + 1..=p {
            tasks.push(Task::Tsqt2 { k, i });
            for j in k + 1..=q {
                tasks.push(Task::Ssrfb { k, i, j });
            }
        }
    }
    let ids: HashMap<Task, u32> = tasks
        .iter()
        .enumerate()
        .map(|(n, t)| (*t, n as u32))
        .collect();
    let mut graph = TaskGraph {
        p,
        q,
        successors: vec![Vec::new(); tasks.len()],
        indegree: vec![0; tasks.len()],
        tasks,
        ids,
    };
    for idx in 0..graph.tasks.len() {
        let task = graph.tasks[idx];
        for pred in predecessors(&task) {
            graph.add_edge(pred, task);
        }
    }
    Ok(graph)
}

/// Direct predecessors of a task under the data-access rules of the
/// algorithm's loops.
fn predecessors(task: &Task) -> Vec<Task> {
    let mut preds = Vec::with_capacity(3);
    match *task {
        Task::Geqt2 { k } => {
            if k > 1 {
                preds.push(Task::Ssrfb {
                    k: k - 1,
                    i: k,
                    j: k,
                });
            }
        }
        Task::Larfb { k, j } => {
            preds.push(Task::Geqt2 { k });
            if k > 1 {
                preds.push(Task::Ssrfb { k: k - 1, i: k, j });
            }
        }
        Task::Tsqt2 { k, i } => {
            if i == k + 1 {
                preds.push(Task::Geqt2 { k });
            } else {
                preds.push(Task::Tsqt2 { k, i: i - 1 });
            }
            if k > 1 {
                preds.push(Task::Ssrfb { k: k - 1, i, j: k });
            }
        }
        Task::Ssrfb { k, i, j } => {
            preds.push(Task::Tsqt2 { k, i });
            if i == k + 1 {
                preds.push(Task::Larfb { k, j });
            } else {
                preds.push(Task::Ssrfb { k, i: i - 1, j });
            }
            if k > 1 {
                preds.push(Task::Ssrfb { k: k - 1, i, j });
            }
        }
    }
    preds
}

impl TaskGraph {
    fn add_edge(&mut self, from: Task, to: Task) {
        let (f, t) = (self.id_of(from).unwrap(), self.id_of(to).unwrap());
        self.successors[f as usize].push(t);
        self.indegree[t as usize] += 1;
    }

    pub fn tile_rows(&self) -> usize {
        self.p
    }

    pub fn tile_cols(&self) -> usize {
        self.q
    }

    pub fn node_count(&self) -> usize {
        self.tasks.len()
    }

    pub fn edge_count(&self) -> usize {
        self.successors.iter().map(Vec::len).sum()
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn task(&self, id: u32) -> Task {
        self.tasks[id as usize]
    }

    pub fn id_of(&self, task: Task) -> Option<u32> {
        self.ids.get(&task).copied()
    }

    pub fn successors(&self, id: u32) -> &[u32] {
        &self.successors[id as usize]
    }

    pub fn indegrees(&self) -> &[u32] {
        &self.indegree
    }

    pub fn edges(&self) -> impl Iterator<Item = (Task, Task)> + '_ {
        self.successors
            .iter()
            .enumerate()
            .flat_map(move |(f, succ)| {
                succ.iter()
                    .map(move |&t| (self.tasks[f], self.tasks[t as usize]))
            })
    }

    /// Predecessor ids of a node (recomputed; edges are stored one-way).
    pub fn predecessor_ids(&self, id: u32) -> Vec<u32> {
        predecessors(&self.tasks[id as usize])
            .into_iter()
            .filter_map(|t| self.id_of(t))
            .filter(|&f| self.successors[f as usize].contains(&id))
            .collect()
    }

    /// Removes one edge, fixing the indegree. Returns whether it existed.
    /// Exists for fault-injection tests of the serialization checker.
    pub fn remove_edge(&mut self, from: Task, to: Task) -> bool {
        let (Some(f), Some(t)) = (self.id_of(from), self.id_of(to)) else {
            return false;
        };
        let succ = &mut self.successors[f as usize];
        if let Some(pos) = succ.iter().position(|&x| x == t) {
            succ.remove(pos);
            self.indegree[t as usize] -= 1;
            true
        } else {
            false
        }
    }

    /// Kahn's algorithm; `None` if the graph has a cycle.
    pub fn topological_sort(&self) -> Option<Vec<Task>> {
        let mut indeg = self.indegree.clone();
        let mut ready: Vec<u32> = (0..self.tasks.len() as u32)
            .filter(|&n| indeg[n as usize] == 0)
            .collect();
        let mut order = Vec::with_capacity(self.tasks.len());
        while let Some(n) = ready.pop() {
            order.push(self.tasks[n as usize]);
            for &s in &self.successors[n as usize] {
                indeg[s as usize] -= 1;
                if indeg[s as usize] == 0 {
                    ready.push(s);
                }
            }
        }
        (order.len() == self.tasks.len()).then_some(order)
    }

    /// Writes the graph as one `TASKID -> TASKID` line per edge.
    pub fn write_edges<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (from, to) in self.edges() {
            writeln!(out, "{from} -> {to}")?;
        }
        Ok(())
    }

    /// Checks that every pair of tasks touching a common resource with at
    /// least one writer is ordered by a directed path, which is what makes
    /// any dependency-respecting execution bitwise deterministic. Returns
    /// the first offending pair on failure.
    pub fn verify_serialization(&self) -> std::result::Result<(), (Task, Task)> {
        let n = self.tasks.len();
        let words = n.div_ceil(64);
        // reach[v] = set of nodes with a path to v; task creation order is
        // topological, so a single forward sweep suffices.
        let mut reach = vec![0u64; n * words];
        for f in 0..n {
            for &t in &self.successors[f] {
                let t = t as usize;
                debug_assert!(f < t, "creation order must be topological");
                let (lo, hi) = if f < t { (f, t) } else { (t, f) };
                let (head, tail) = reach.split_at_mut(hi * words);
                let dst = &mut tail[..words];
                let src = &head[lo * words..lo * words + words];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d |= s;
                }
                dst[lo / 64] |= 1u64 << (lo % 64);
            }
        }
        let has_path = |a: usize, b: usize| -> bool {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            reach[hi * words + lo / 64] >> (lo % 64) & 1 == 1
        };
        let access_sets: Vec<_> = self.tasks.iter().map(accesses).collect();
        for a in 0..n {
            for b in a + 1..n {
                let conflict = access_sets[a].iter().any(|&(ra, wa)| {
                    access_sets[b]
                        .iter()
                        .any(|&(rb, wb)| ra == rb && (wa || wb))
                });
                if conflict && !has_path(a, b) {
                    return Err((self.tasks[a], self.tasks[b]));
                }
            }
        }
        Ok(())
    }
}
