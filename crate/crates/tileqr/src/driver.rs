//! Executes the tile algorithm, either as the literal sequential triple loop
//! or graph-driven across a worker pool, and applies the implicit Q factor.

use std::collections::BinaryHeap;
use std::sync::atomic::{AtomicU32, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Instant;

use crate::dag::{self, Task};
use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::kernels::{
    apply_wy_diag, apply_wy_stacked, geqt2, larfb_apply, ssrfb_apply, tsqt2, KernelKind, TFactor,
};
use crate::reference::QrFactorization;
use crate::storage::TiledMatrix;
use crate::trace::{ExecutionTrace, TraceRecord};

/// The in-place factorization result: R and the reflector blocks live in the
/// tiles (R in the upper block triangle, V_kk in the strict lower part of
/// diagonal tiles, V_ik filling subdiagonal tiles), and the T factors in a
/// p x q grid of slots, (k,k) from geqt2 and (i,k) from tsqt2.
///
/// The T grid persists for the whole lifetime of the factor set so the Q
/// factor can be replayed later.
#[derive(Debug, Clone)]
pub struct FactorSet {
    tiles: TiledMatrix,
    t: Vec<TFactor>,
    kernel_counts: [u64; 4],
}

impl FactorSet {
    pub fn tiles(&self) -> &TiledMatrix {
        &self.tiles
    }

    pub fn t_factor(&self, i: usize, k: usize) -> &TFactor {
        &self.t[k * self.tiles.tile_rows() + i]
    }

    pub fn block_size(&self) -> usize {
        self.tiles.block_size()
    }

    /// Executed kernel invocations, indexed by [`KernelKind::index`].
    pub fn kernel_counts(&self) -> [u64; 4] {
        self.kernel_counts
    }

    /// Modeled flop total of the executed kernels, in thirds of a flop.
    pub fn modeled_flop_thirds(&self) -> u128 {
        KernelKind::ALL
            .iter()
            .map(|&k| {
                self.kernel_counts[k.index()] as u128
                    * crate::kernels::kernel_flop_thirds(k, self.block_size())
            })
            .sum()
    }

    /// Bitwise equality of tiles and T factors; the determinism check.
    pub fn bitwise_eq(&self, other: &FactorSet) -> bool {
        if self.tiles.data().len() != other.tiles.data().len() || self.t.len() != other.t.len() {
            return false;
        }
        let tiles_eq = self
            .tiles
            .data()
            .iter()
            .zip(other.tiles.data())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        let t_eq = self.t.iter().zip(&other.t).all(|(a, b)| {
            a.as_slice()
                .iter()
                .zip(b.as_slice())
                .all(|(x, y)| x.to_bits() == y.to_bits())
        });
        tiles_eq && t_eq
    }
}

/// Shared mutable view of the factorization state used by task execution.
///
/// Tasks obtain raw access to the tile buffer and the T grid; the dependency
/// graph serializes every pair of conflicting accesses (checked by
/// `TaskGraph::verify_serialization`), so no two concurrent tasks ever
/// materialize references to the same buffer with a writer among them. The
/// one same-tile concurrency the algorithm allows, LARFB reading V_kk while
/// TSQT2 rewrites the R region of the same diagonal tile, is routed through
/// `vsnap`: GEQT2 publishes a copy of its factored tile there, and LARFB
/// reads only the copy. The V region is never written again, so the copy
/// stays exact.
struct SharedState {
    tiles: *mut f64,
    tile_len: usize,
    t_slots: *mut TFactor,
    vsnap: *mut f64,
    p: usize,
    b: usize,
}

unsafe impl Send for SharedState {}
unsafe impl Sync for SharedState {}

impl SharedState {
    #[allow(clippy::mut_from_ref)]
    unsafe fn tile_mut(&self, i: usize, j: usize) -> &mut [f64] {
        let off = (j * self.p + i) * self.tile_len;
        std::slice::from_raw_parts_mut(self.tiles.add(off), self.tile_len)
    }

    unsafe fn tile_ref(&self, i: usize, j: usize) -> &[f64] {
        let off = (j * self.p + i) * self.tile_len;
        std::slice::from_raw_parts(self.tiles.add(off), self.tile_len)
    }

    #[allow(clippy::mut_from_ref)]
    unsafe fn vsnap_mut(&self, k: usize) -> &mut [f64] {
        std::slice::from_raw_parts_mut(self.vsnap.add(k * self.tile_len), self.tile_len)
    }

    unsafe fn vsnap_ref(&self, k: usize) -> &[f64] {
        std::slice::from_raw_parts(self.vsnap.add(k * self.tile_len), self.tile_len)
    }

    #[allow(clippy::mut_from_ref)]
    unsafe fn t_mut(&self, i: usize, k: usize) -> &mut TFactor {
        &mut *self.t_slots.add(k * self.p + i)
    }

    unsafe fn t_ref(&self, i: usize, k: usize) -> &TFactor {
        &*self.t_slots.add(k * self.p + i)
    }

    /// Runs one task's kernel. Caller must guarantee the task's graph
    /// predecessors have finished and its successors have not started.
    unsafe fn execute(&self, task: Task) {
        let b = self.b;
        match task {
            Task::Geqt2 { k } => {
                geqt2(self.tile_mut(k - 1, k - 1), self.t_mut(k - 1, k - 1), b);
                self.vsnap_mut(k - 1)
                    .copy_from_slice(self.tile_ref(k - 1, k - 1));
            }
            Task::Larfb { k, j } => {
                larfb_apply(
                    self.tile_mut(k - 1, j - 1),
                    self.vsnap_ref(k - 1),
                    self.t_ref(k - 1, k - 1),
                    b,
                );
            }
            Task::Tsqt2 { k, i } => {
                tsqt2(
                    self.tile_mut(k - 1, k - 1),
                    self.tile_mut(i - 1, k - 1),
                    self.t_mut(i - 1, k - 1),
                    b,
                );
            }
            Task::Ssrfb { k, i, j } => {
                ssrfb_apply(
                    self.tile_mut(k - 1, j - 1),
                    self.tile_mut(i - 1, j - 1),
                    self.tile_ref(i - 1, k - 1),
                    self.t_ref(i - 1, k - 1),
                    b,
                );
            }
        }
    }
}

fn new_t_grid(p: usize, q: usize, b: usize) -> Vec<TFactor> {
    (0..p * q).map(|_| TFactor::new(b)).collect()
}

/// Executes the exact triple loop of the tile algorithm in task order.
pub fn tiled_qr_sequential(mut a: TiledMatrix) -> FactorSet {
    let (p, q, b) = (a.tile_rows(), a.tile_cols(), a.block_size());
    let mut t = new_t_grid(p, q, b);
    let mut vsnap = vec![0.0f64; p.min(q) * b * b];
    let mut counts = [0u64; 4];
    {
        let shared = SharedState {
            tiles: a.data_mut_ptr(),
            tile_len: b * b,
            t_slots: t.as_mut_ptr(),
            vsnap: vsnap.as_mut_ptr(),
            p,
            b,
        };
        let mut run = |task: Task| {
            counts[task.kind().index()] += 1;
            // Single-threaded with exclusive ownership of the buffers.
            unsafe { shared.execute(task) }
        };
        for k in 1..=p.min(q) {
            run(Task::Geqt2 { k });
            for j in k + 1..=q {
                run(Task::Larfb { k, j });
            }
            for i in k + 1..=p {
                run(Task::Tsqt2 { k, i });
                for j in k + 1..=q {
                    run(Task::Ssrfb { k, i, j });
                }
            }
        }
    }
    FactorSet {
        tiles: a,
        t,
        kernel_counts: counts,
    }
}

/// Ready-queue key: priority class ascending, step ascending, then FIFO by
/// enqueue sequence number.
type ReadyKey = std::cmp::Reverse<(u8, usize, u64, u32)>;

struct Queue {
    heap: Mutex<(BinaryHeap<ReadyKey>, u64)>,
    cv: Condvar,
    remaining: AtomicUsize,
}

impl Queue {
    fn push(&self, graph: &dag::TaskGraph, id: u32) {
        let task = graph.task(id);
        let mut g = self.heap.lock().unwrap();
        let seq = g.1;
        g.1 += 1;
        g.0.push(std::cmp::Reverse((
            dag::priority_of(&task),
            task.step(),
            seq,
            id,
        )));
        drop(g);
        self.cv.notify_one();
    }

    /// Pops the highest-priority ready task; `None` once all tasks finished.
    fn pop(&self) -> Option<u32> {
        let mut g = self.heap.lock().unwrap();
        loop {
            if let Some(std::cmp::Reverse((_, _, _, id))) = g.0.pop() {
                return Some(id);
            }
            if self.remaining.load(Ordering::Acquire) == 0 {
                return None;
            }
            g = self.cv.wait(g).unwrap();
        }
    }

    fn task_done(&self) {
        if self.remaining.fetch_sub(1, Ordering::AcqRel) == 1 {
            // Last task: wake idle workers so they can exit. Taking the lock
            // orders the wakeup against waiters between check and wait.
            drop(self.heap.lock().unwrap());
            self.cv.notify_all();
        }
    }
}

/// Graph-driven parallel factorization.
///
/// Builds the DAG, seeds the ready queue with the zero-indegree tasks, and
/// lets `workers` threads repeatedly pop the highest-priority ready task,
/// run its kernel, and release its successors. The result is bitwise
/// identical to [`tiled_qr_sequential`] for any worker count because the
/// graph totally orders all conflicting tile accesses.
pub fn tiled_qr_parallel(a: TiledMatrix, workers: usize) -> Result<(FactorSet, ExecutionTrace)> {
    tiled_qr_parallel_opts(a, workers, true)
}

/// [`tiled_qr_parallel`] with tracing optionally disabled for benchmarks.
pub fn tiled_qr_parallel_opts(
    mut a: TiledMatrix,
    workers: usize,
    capture_trace: bool,
) -> Result<(FactorSet, ExecutionTrace)> {
    if workers == 0 {
        return Err(Error::invalid("worker count must be at least 1"));
    }
    let (p, q, b) = (a.tile_rows(), a.tile_cols(), a.block_size());
    let graph = dag::build_dag(p, q)?;
    let n_tasks = graph.node_count();
    let mut t = new_t_grid(p, q, b);
    let mut vsnap = vec![0.0f64; p.min(q) * b * b];

    let shared = SharedState {
        tiles: a.data_mut_ptr(),
        tile_len: b * b,
        t_slots: t.as_mut_ptr(),
        vsnap: vsnap.as_mut_ptr(),
        p,
        b,
    };
    let indegree: Vec<AtomicU32> = graph
        .indegrees()
        .iter()
        .map(|&d| AtomicU32::new(d))
        .collect();
    let queue = Queue {
        heap: Mutex::new((BinaryHeap::new(), 0)),
        cv: Condvar::new(),
        remaining: AtomicUsize::new(n_tasks),
    };
    let counts: [AtomicU64; 4] = Default::default();
    for (id, &d) in graph.indegrees().iter().enumerate() {
        if d == 0 {
            queue.push(&graph, id as u32);
        }
    }

    let t0 = Instant::now();
    let worker_traces: Vec<Vec<TraceRecord>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let (graph, queue, indegree, shared, counts) =
                    (&graph, &queue, &indegree, &shared, &counts);
                scope.spawn(move || {
                    let mut records = Vec::new();
                    while let Some(id) = queue.pop() {
                        let task = graph.task(id);
                        let start = t0.elapsed().as_nanos() as u64;
                        // Exclusive access guaranteed: every conflicting task
                        // is ordered before or after this one in the graph.
                        unsafe { shared.execute(task) };
                        let end = t0.elapsed().as_nanos() as u64;
                        if capture_trace {
                            records.push(TraceRecord {
                                worker: w,
                                task,
                                start_ns: start,
                                end_ns: end,
                            });
                        }
                        counts[task.kind().index()].fetch_add(1, Ordering::Relaxed);
                        for &succ in graph.successors(id) {
                            if indegree[succ as usize].fetch_sub(1, Ordering::AcqRel) == 1 {
                                queue.push(graph, succ);
                            }
                        }
                        queue.task_done();
                    }
                    records
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    });

    let mut records = Vec::with_capacity(if capture_trace { n_tasks } else { 0 });
    for wr in worker_traces {
        records.extend(wr);
    }
    let trace = ExecutionTrace { records, workers };
    let kernel_counts = [0, 1, 2, 3].map(|i| counts[i as usize].load(Ordering::Relaxed));
    Ok((
        FactorSet {
            tiles: a,
            t,
            kernel_counts,
        },
        trace,
    ))
}

impl FactorSet {
    fn q_steps(&self) -> usize {
        self.tiles.tile_rows().min(self.tiles.tile_cols())
    }

    /// Replays the stored block reflectors over `bmat` (given as tile-row
    /// panels of width `w`): forward order with transposed T for Q^T,
    /// reverse order with plain T for Q.
    fn replay(&self, panels: &mut [Vec<f64>], w: usize, transpose: bool) {
        let b = self.block_size();
        let p = self.tiles.tile_rows();
        let kmax = self.q_steps();
        if transpose {
            for k in 0..kmax {
                let v_kk = self.tiles.tile(k, k);
                apply_wy_diag(&mut panels[k], w, v_kk, self.t_factor(k, k), b, true);
                for i in k + 1..p {
                    let (top, rest) = panels.split_at_mut(k + 1);
                    apply_wy_stacked(
                        &mut top[k],
                        &mut rest[i - k - 1],
                        w,
                        self.tiles.tile(i, k),
                        self.t_factor(i, k),
                        b,
                        true,
                    );
                }
            }
        } else {
            for k in (0..kmax).rev() {
                for i in (k + 1..p).rev() {
                    let (top, rest) = panels.split_at_mut(k + 1);
                    apply_wy_stacked(
                        &mut top[k],
                        &mut rest[i - k - 1],
                        w,
                        self.tiles.tile(i, k),
                        self.t_factor(i, k),
                        b,
                        false,
                    );
                }
                let v_kk = self.tiles.tile(k, k);
                apply_wy_diag(&mut panels[k], w, v_kk, self.t_factor(k, k), b, false);
            }
        }
    }

    fn apply_q_impl(&self, bmat: &DenseMatrix, transpose: bool) -> Result<DenseMatrix> {
        let m = self.tiles.rows();
        if bmat.rows() != m {
            return Err(Error::invalid(format!(
                "matrix has {} rows, factorization expects {m}",
                bmat.rows()
            )));
        }
        let b = self.block_size();
        let p = self.tiles.tile_rows();
        let w = bmat.cols();
        // Zero-padded tile-row panels, each b x w column-major. The padded
        // rows carry zero reflector entries, so Q acts as Q_real (+) I.
        let mut panels: Vec<Vec<f64>> = (0..p).map(|_| vec![0.0; b * w]).collect();
        for c in 0..w {
            let src = bmat.col(c);
            for (s, panel) in panels.iter_mut().enumerate() {
                let rows = (m - s * b).min(b);
                panel[c * b..c * b + rows].copy_from_slice(&src[s * b..s * b + rows]);
            }
        }
        self.replay(&mut panels, w, transpose);
        let mut out = DenseMatrix::zeros(m, w);
        for c in 0..w {
            let dst = out.col_mut(c);
            for (s, panel) in panels.iter().enumerate() {
                let rows = (m - s * b).min(b);
                dst[s * b..s * b + rows].copy_from_slice(&panel[c * b..c * b + rows]);
            }
        }
        Ok(out)
    }
}

impl QrFactorization for FactorSet {
    fn nrows(&self) -> usize {
        self.tiles.rows()
    }

    fn ncols(&self) -> usize {
        self.tiles.cols()
    }

    fn r_matrix(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.tiles.rows(), self.tiles.cols(), |r, c| {
            if r <= c {
                self.tiles.get(r, c)
            } else {
                0.0
            }
        })
    }

    fn apply_q(&self, bmat: &DenseMatrix) -> Result<DenseMatrix> {
        self.apply_q_impl(bmat, false)
    }

    fn apply_q_transpose(&self, bmat: &DenseMatrix) -> Result<DenseMatrix> {
        self.apply_q_impl(bmat, true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference::{
        backward_error, house_qr_unblocked, normalize_r_signs, orthogonality_error,
        BACKWARD_ERROR_FACTOR,
    };

    const EPS: f64 = f64::EPSILON;

    fn tiled(a: &DenseMatrix, b: usize) -> TiledMatrix {
        TiledMatrix::from_col_major(a, b).unwrap()
    }

    #[test]
    fn identity_factors_to_identity() {
        let a = DenseMatrix::identity(8);
        let f = tiled_qr_sequential(tiled(&a, 4));
        assert_eq!(f.r_matrix(), a);
        for slot in &f.t {
            assert!(slot.is_zero());
        }
    }

    #[test]
    fn sequential_matches_unblocked_oracle() {
        let a = DenseMatrix::random_uniform(12, 12, 2);
        let f = tiled_qr_sequential(tiled(&a, 4));
        assert!(backward_error(&a, &f) <= BACKWARD_ERROR_FACTOR * 12.0 * EPS);
        let rt = normalize_r_signs(&f.r_matrix());
        let ru = normalize_r_signs(&house_qr_unblocked(&a).r_matrix());
        assert!(rt.sub(&ru).max_abs() <= 1e-12 * ru.max_abs());
    }

    #[test]
    fn padded_5x3_meets_error_bound() {
        let a = DenseMatrix::random_uniform(5, 3, 6);
        let f = tiled_qr_sequential(tiled(&a, 2));
        assert!(backward_error(&a, &f) <= BACKWARD_ERROR_FACTOR * 5.0 * EPS);
    }

    #[test]
    fn rectangular_grids() {
        for (m, n, b) in [(20, 8, 4), (8, 20, 4), (13, 9, 4), (9, 16, 5)] {
            let a = DenseMatrix::random_uniform(m, n, (m * 31 + n) as u64);
            let f = tiled_qr_sequential(tiled(&a, b));
            let bound = BACKWARD_ERROR_FACTOR * m.max(n) as f64 * EPS;
            assert!(backward_error(&a, &f) <= bound, "m={m} n={n} b={b}");
        }
    }

    #[test]
    fn parallel_single_worker_is_bitwise_sequential() {
        let a = DenseMatrix::random_uniform(24, 24, 3);
        let f_seq = tiled_qr_sequential(tiled(&a, 6));
        let (f_par, trace) = tiled_qr_parallel(tiled(&a, 6), 1).unwrap();
        assert!(f_seq.bitwise_eq(&f_par));
        assert_eq!(
            trace.records.len(),
            dag::build_dag(4, 4).unwrap().node_count()
        );
        assert!(trace.validate_timelines().is_ok());
    }

    #[test]
    fn parallel_output_is_worker_count_independent() {
        let a = DenseMatrix::random_uniform(60, 60, 17);
        let reference = tiled_qr_sequential(tiled(&a, 10));
        for workers in [1, 2, 3, 4, 8] {
            let (f, trace) = tiled_qr_parallel(tiled(&a, 10), workers).unwrap();
            assert!(reference.bitwise_eq(&f), "workers={workers}");
            assert_eq!(
                trace.records.len(),
                dag::build_dag(6, 6).unwrap().node_count()
            );
        }
    }

    #[test]
    fn scheduler_stress_many_tasks_small_tiles() {
        // 10x10 grid (385 tasks) with tiny kernels so queue contention
        // dominates; every interleaving must reproduce the sequential bits.
        let a = DenseMatrix::random_uniform(40, 40, 31);
        let reference = tiled_qr_sequential(tiled(&a, 4));
        for rep in 0..10 {
            let (f, trace) = tiled_qr_parallel(tiled(&a, 4), 8).unwrap();
            assert!(reference.bitwise_eq(&f), "rep={rep}");
            assert_eq!(trace.records.len(), 385);
            assert!(trace.validate_timelines().is_ok());
        }
    }

    #[test]
    fn zero_workers_rejected() {
        let a = DenseMatrix::identity(4);
        assert!(matches!(
            tiled_qr_parallel(tiled(&a, 2), 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn trace_respects_dependencies() {
        let a = DenseMatrix::random_uniform(40, 40, 23);
        let (_, trace) = tiled_qr_parallel(tiled(&a, 8), 4).unwrap();
        let graph = dag::build_dag(5, 5).unwrap();
        let mut end_of = std::collections::HashMap::new();
        let mut start_of = std::collections::HashMap::new();
        for r in &trace.records {
            end_of.insert(r.task, r.end_ns);
            start_of.insert(r.task, r.start_ns);
        }
        for (from, to) in graph.edges() {
            assert!(
                end_of[&from] <= start_of[&to],
                "{from} must finish before {to} starts"
            );
        }
    }

    #[test]
    fn kernel_counts_match_loop_enumeration() {
        let a = DenseMatrix::random_uniform(30, 18, 5);
        let f = tiled_qr_sequential(tiled(&a, 6)); // p=5, q=3
        let (p, q) = (5usize, 3usize);
        let kmax = p.min(q);
        let g: u64 = kmax as u64;
        let l: u64 = (1..=kmax).map(|k| (q - k) as u64).sum();
        let t: u64 = (1..=kmax).map(|k| (p - k) as u64).sum();
        let s: u64 = (1..=kmax).map(|k| ((p - k) * (q - k)) as u64).sum();
        assert_eq!(f.kernel_counts(), [g, l, t, s]);
        assert_eq!(
            f.modeled_flop_thirds(),
            crate::reference::FlopModel::tiled(p, q, 6)
                .unwrap()
                .total_thirds
        );
    }

    #[test]
    fn apply_q_zero_matrix() {
        let a = DenseMatrix::random_uniform(10, 10, 7);
        let f = tiled_qr_sequential(tiled(&a, 5));
        let z = DenseMatrix::zeros(10, 3);
        let qz = f.apply_q_transpose(&z).unwrap();
        assert!(qz.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn apply_qt_to_input_gives_r() {
        let a = DenseMatrix::random_uniform(18, 12, 8);
        let f = tiled_qr_sequential(tiled(&a, 5));
        let qta = f.apply_q_transpose(&a).unwrap();
        let r = f.r_matrix();
        assert!(qta.sub(&r).frob_norm() / a.frob_norm() <= BACKWARD_ERROR_FACTOR * 18.0 * EPS);
    }

    #[test]
    fn apply_q_roundtrip() {
        let a = DenseMatrix::random_uniform(15, 15, 9);
        let f = tiled_qr_sequential(tiled(&a, 4));
        let bmat = DenseMatrix::random_uniform(15, 4, 10);
        let back = f.apply_q(&f.apply_q_transpose(&bmat).unwrap()).unwrap();
        assert!(
            back.sub(&bmat).frob_norm() / bmat.frob_norm() <= BACKWARD_ERROR_FACTOR * 15.0 * EPS
        );
    }

    #[test]
    fn apply_q_orthogonality() {
        let a = DenseMatrix::random_uniform(20, 20, 11);
        let f = tiled_qr_sequential(tiled(&a, 6));
        assert!(orthogonality_error(&f) <= BACKWARD_ERROR_FACTOR * 20.0 * EPS);
    }

    #[test]
    fn identity_factors_apply_q_is_noop_bitwise() {
        let id = DenseMatrix::identity(9);
        let f = tiled_qr_sequential(tiled(&id, 4));
        let bmat = DenseMatrix::random_uniform(9, 5, 12);
        let out = f.apply_q(&bmat).unwrap();
        for (x, y) in out.data().iter().zip(bmat.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn apply_q_row_mismatch_rejected() {
        let a = DenseMatrix::random_uniform(8, 8, 13);
        let f = tiled_qr_sequential(tiled(&a, 4));
        let bad = DenseMatrix::zeros(7, 2);
        assert!(f.apply_q(&bad).is_err());
        assert!(f.apply_q_transpose(&bad).is_err());
    }
}
