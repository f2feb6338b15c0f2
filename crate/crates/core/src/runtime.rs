//! Orchestration of the consensus blocks.
//!
//! Every iteration runs the phases
//!
//! * P1: Gauss-Seidel sweep over the subvectors of each `X_i` (blocks are
//!   independent of each other),
//! * P2: ring aggregation of the `Z` sums, finalized by the last block and
//!   broadcast to the others,
//! * P3: slack updates,
//! * P4: multiplier updates,
//! * P5: merit/residual reduce along the ring, trace record and stopping test.
//!
//! Two executions share the per-block phase code: [`Workers::Reference`]
//! runs everything on the calling thread, [`Workers::Threads`] runs long-lived
//! workers that own disjoint sets of blocks and talk only through channels.
//! Both associate every floating-point sum in block-index order, so their
//! reports are bit-identical (apart from wall-clock timings).

use std::io;
use std::sync::mpsc::{self, Receiver, Sender};
use std::thread;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{
    self, block_merit, block_prox, block_residuals, consensus_prox, initial_states, primal_sweep,
    prox_params, rate_certificate, rate_violations, update_duals, update_y, z_closed_form,
    z_contribution, BlockData, BlockState, EngineError, GlobalState, PenaltyMode, ProxSchedule,
    Residuals, SolverConfig,
};
use crate::model::{slack_upper_bounds, ModelError, PartitionPlan, ProblemSpec};
use crate::ring::{expect, Envelope, Partial, RingError};
use crate::trace::{IterationTrace, NullSink, TraceSink};

/// Slack allowed in the `O(1/k)` bound check.
pub const RATE_CHECK_SLACK: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Ring(#[from] RingError),
    #[error("trace sink: {0}")]
    Io(#[from] io::Error),
}

/// Where the blocks execute.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Workers {
    /// Single-threaded reference semantics.
    Reference,
    /// Worker threads, each owning a contiguous range of blocks. `0` means
    /// one worker per block; counts above the number of blocks are capped.
    Threads(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOptions {
    pub workers: Workers,
    /// Compute the `O(1/k)` certificate and check it against the trace.
    pub rate_check: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            workers: Workers::Threads(0),
            rate_check: false,
        }
    }
}

/// Assignment of consensus blocks to worker threads.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Topology {
    pub blocks: usize,
    pub workers: usize,
    owner: Vec<usize>,
}

impl Topology {
    pub fn new(blocks: usize, threads: usize) -> Self {
        let workers = if threads == 0 { blocks } else { threads.min(blocks) };
        let owner = (0..blocks).map(|b| b * workers / blocks).collect();
        Self {
            blocks,
            workers,
            owner,
        }
    }

    pub fn owner(&self, block: usize) -> usize {
        self.owner[block]
    }

    pub fn blocks_of(&self, worker: usize) -> Vec<usize> {
        (0..self.blocks).filter(|&b| self.owner[b] == worker).collect()
    }

    /// Forward hops plus broadcasts of one batched aggregation pass.
    pub fn aggregation_messages_per_iteration(&self) -> usize {
        2 * (self.blocks - 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIters,
    InnerFailure,
    InfeasibleFlagged,
}

/// Outcome of checking `L^k - N f(Z^K) <= C/k + slack` over a trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateCheck {
    pub constant: f64,
    pub n_f_final: f64,
    pub slack: f64,
    /// Iterate numbers `k >= 1` at which the bound fails.
    pub violations: Vec<usize>,
    pub holds: bool,
    /// The certificate assumes the terminal point is the limit; it is only
    /// meaningful when the run converged.
    pub run_converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub iterations: usize,
    pub z: Vec<f64>,
    pub f_z: f64,
    pub merit: f64,
    pub residuals: Residuals,
    pub blocks: Vec<BlockState>,
    pub trace: Vec<IterationTrace>,
    /// `sum_i ||X_i^{k+1} - X_i^k||^2` per completed iteration.
    pub primal_step_sq: Vec<f64>,
    pub total_clamps: u64,
    pub aggregation_messages: u64,
    /// `(block, row)` inequality rows that cannot hold anywhere on the box.
    pub flagged_rows: Vec<(usize, usize)>,
    pub rate_check: Option<RateCheck>,
    pub message: Option<String>,
}

impl SolveReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Solves with default options, keeping the trace only in the report.
pub fn run(spec: &ProblemSpec, plan: &PartitionPlan, cfg: &SolverConfig) -> Result<SolveReport, RuntimeError> {
    run_with(spec, plan, cfg, &RunOptions::default(), &mut NullSink)
}

pub fn run_with(
    spec: &ProblemSpec,
    plan: &PartitionPlan,
    cfg: &SolverConfig,
    opts: &RunOptions,
    sink: &mut dyn TraceSink,
) -> Result<SolveReport, RuntimeError> {
    spec.validate()?;
    plan.validate(spec)?;
    cfg.validate(plan.blocks)?;
    if opts.rate_check {
        if cfg.penalty_mode != PenaltyMode::ConsensusOnly {
            return Err(EngineError::CertificateUndefined("requires consensus-only penalty mode").into());
        }
        if cfg.prox_schedule != ProxSchedule::Constant {
            return Err(EngineError::CertificateUndefined(
                "requires a nonincreasing (constant) proximal schedule",
            )
            .into());
        }
    }

    let slack = slack_upper_bounds(spec, plan);
    let data = BlockData::for_plan(spec, plan, &slack);
    let (blocks, global) = initial_states(spec, &data, cfg);
    let initial_merit = engine::merit(spec, &data, &blocks, &global.z, cfg.penalty_mode);

    let ctx = Ctx {
        spec,
        plan,
        cfg,
        data: &data,
    };
    let replicas: Vec<Replica> = blocks
        .iter()
        .cloned()
        .map(|state| Replica {
            state,
            z: global.z.clone(),
            z_prev: global.z_prev.clone(),
        })
        .collect();

    let mut driver = Driver::new(cfg, initial_merit, sink);
    let replicas = match opts.workers {
        Workers::Reference => run_reference(&ctx, replicas, &mut driver)?,
        Workers::Threads(t) => run_threads(&ctx, replicas, Topology::new(plan.blocks, t), &mut driver)?,
    };

    let mut report = driver.finish(&ctx, replicas, slack.never_active);
    if opts.rate_check {
        report.rate_check = Some(check_rate(&ctx, &blocks, &global, &report)?);
    }
    Ok(report)
}

fn check_rate(
    ctx: &Ctx,
    initial: &[BlockState],
    initial_global: &GlobalState,
    report: &SolveReport,
) -> Result<RateCheck, RuntimeError> {
    let prox0 = prox_params(0, ctx.cfg.prox_schedule, initial, initial_global);
    let y_final: Vec<Vec<f64>> = report.blocks.iter().map(|b| b.y.clone()).collect();
    let constant = rate_certificate(initial, &initial_global.z, &prox0, &report.z, &y_final, ctx.cfg)?;
    let n_f_final = ctx.plan.blocks as f64 * report.f_z;
    let merits: Vec<f64> = report.trace.iter().map(|t| t.merit).collect();
    let violations = rate_violations(&merits, constant, n_f_final, RATE_CHECK_SLACK);
    Ok(RateCheck {
        constant,
        n_f_final,
        slack: RATE_CHECK_SLACK,
        holds: violations.is_empty(),
        violations,
        run_converged: report.status == SolveStatus::Converged,
    })
}

struct Ctx<'a> {
    spec: &'a ProblemSpec,
    plan: &'a PartitionPlan,
    cfg: &'a SolverConfig,
    data: &'a [BlockData],
}

/// A block's state plus its copy of the common variable.
struct Replica {
    state: BlockState,
    z: Vec<f64>,
    z_prev: Vec<f64>,
}

/// What one block carries from P1 into the later phases.
struct Step {
    gamma: f64,
    tau: f64,
    /// `(x, x_prev)` before the sweep, for rolling back an aborted iteration.
    snapshot: (Vec<f64>, Vec<f64>),
    failure: Option<EngineError>,
}

/// Per-block contribution to the P5 reduce.
#[derive(Clone, Debug)]
struct Summary {
    merit: f64,
    residuals: Residuals,
    step_sq: f64,
    clamps: u64,
    messages: u64,
    failure: Option<String>,
}

impl Summary {
    fn fold(prev: Option<Summary>, local: Summary) -> Summary {
        match prev {
            None => local,
            Some(p) => Summary {
                merit: p.merit + local.merit,
                residuals: p.residuals.combine(local.residuals),
                step_sq: p.step_sq + local.step_sq,
                clamps: p.clamps + local.clamps,
                messages: p.messages + local.messages,
                failure: p.failure.or(local.failure),
            },
        }
    }
}

/// P1 for one block.
fn start_block(ctx: &Ctx, b: usize, rep: &mut Replica, k: usize) -> Step {
    let schedule = ctx.cfg.prox_schedule;
    let (sigma, gamma) = block_prox(k, schedule, &rep.state);
    let tau = consensus_prox(k, schedule, ctx.cfg.tau0, &rep.z, &rep.z_prev);
    let snapshot = (rep.state.x.clone(), rep.state.x_prev.clone());
    let failure = primal_sweep(
        ctx.spec,
        &ctx.data[b],
        &mut rep.state,
        &rep.z,
        &ctx.plan.col_ranges,
        sigma,
        ctx.cfg,
    )
    .err();
    Step {
        gamma,
        tau,
        snapshot,
        failure,
    }
}

/// P3, P4 and the local part of P5. `z_new` is `None` when some block failed
/// in P1; the iteration is then rolled back.
fn finish_block(
    ctx: &Ctx,
    b: usize,
    rep: &mut Replica,
    step: Step,
    z_new: Option<Vec<f64>>,
    k: usize,
    messages: u64,
) -> Summary {
    let data = &ctx.data[b];
    let Some(z_new) = z_new else {
        (rep.state.x, rep.state.x_prev) = step.snapshot;
        return Summary {
            merit: 0.0,
            residuals: Residuals::default(),
            step_sq: 0.0,
            clamps: 0,
            messages,
            failure: step.failure.map(|e| format!("block {b}: {e}")),
        };
    };
    rep.z_prev = std::mem::replace(&mut rep.z, z_new);

    let g_val = data.ineq.eval(&rep.state.x);
    let mut failure = None;
    match update_y(&rep.state, &g_val, step.gamma, &data.slack_upper, ctx.cfg.penalty_mode) {
        Ok(y) => rep.state.y_prev = std::mem::replace(&mut rep.state.y, y),
        Err(e) => failure = Some(format!("block {b}: {e}")),
    }
    let h_val = data.eq.eval(&rep.state.x);
    let clamps = update_duals(
        &mut rep.state,
        &rep.z,
        &g_val,
        &h_val,
        ctx.cfg.direction_at(k),
        ctx.cfg.dual_bound,
    ) as u64;

    Summary {
        merit: block_merit(ctx.spec, data, &rep.state, &rep.z, ctx.cfg.penalty_mode),
        residuals: block_residuals(data, &rep.state, &rep.z),
        step_sq: rep
            .state
            .x
            .iter()
            .zip(&rep.state.x_prev)
            .map(|(a, b)| (a - b) * (a - b))
            .sum(),
        clamps,
        messages,
        failure,
    }
}

fn finalize_z(ctx: &Ctx, partial: &Partial, failed: bool) -> Option<Vec<f64>> {
    if failed {
        return None;
    }
    z_closed_form(&partial.numerator, partial.denominator, &ctx.spec.lower, &ctx.spec.upper).ok()
}

enum Verdict {
    Continue,
    Stop,
}

/// Coordinator state: trace, stopping test, status.
struct Driver<'s> {
    cfg: SolverConfig,
    prev_merit: f64,
    sink: &'s mut dyn TraceSink,
    trace: Vec<IterationTrace>,
    step_sq: Vec<f64>,
    clamps: u64,
    messages: u64,
    status: Option<SolveStatus>,
    message: Option<String>,
    last_residuals: Residuals,
    started: Instant,
}

impl<'s> Driver<'s> {
    fn new(cfg: &SolverConfig, initial_merit: f64, sink: &'s mut dyn TraceSink) -> Self {
        Self {
            cfg: cfg.clone(),
            prev_merit: initial_merit,
            sink,
            trace: Vec::new(),
            step_sq: Vec::new(),
            clamps: 0,
            messages: 0,
            status: None,
            message: None,
            last_residuals: Residuals::default(),
            started: Instant::now(),
        }
    }

    fn wants_iteration(&self) -> bool {
        self.status.is_none() && self.trace.len() < self.cfg.max_iters
    }

    fn begin(&mut self) {
        self.started = Instant::now();
    }

    fn complete(&mut self, k: usize, s: Summary, f_z: f64) -> Result<Verdict, RuntimeError> {
        self.messages += s.messages;
        if let Some(msg) = s.failure {
            self.status = Some(SolveStatus::InnerFailure);
            self.message = Some(msg);
            return Ok(Verdict::Stop);
        }
        let row = IterationTrace {
            k,
            merit: s.merit,
            r_cons: s.residuals.cons,
            r_ineq: s.residuals.ineq,
            r_eq: s.residuals.eq,
            f_z,
            clamp_count: s.clamps,
            wall_time_us: self.started.elapsed().as_micros() as u64,
        };
        self.sink.record(&row)?;
        self.trace.push(row);
        self.step_sq.push(s.step_sq);
        self.clamps += s.clamps;
        self.last_residuals = s.residuals;

        let merit_change = (s.merit - self.prev_merit).abs();
        self.prev_merit = s.merit;
        if s.residuals.max() < self.cfg.tol_residual && merit_change < self.cfg.tol_merit {
            self.status = Some(SolveStatus::Converged);
            return Ok(Verdict::Stop);
        }
        Ok(if self.trace.len() >= self.cfg.max_iters {
            Verdict::Stop
        } else {
            Verdict::Continue
        })
    }

    fn finish(self, ctx: &Ctx, replicas: Vec<Replica>, flagged: Vec<(usize, usize)>) -> SolveReport {
        let status = self.status.unwrap_or(if flagged.is_empty() {
            SolveStatus::MaxIters
        } else {
            SolveStatus::InfeasibleFlagged
        });
        let z = replicas
            .last()
            .map(|r| r.z.clone())
            .expect("at least one block");
        let blocks: Vec<BlockState> = replicas.into_iter().map(|r| r.state).collect();
        let residuals = engine::residuals(ctx.data, &blocks, &z);
        SolveReport {
            status,
            iterations: self.trace.len(),
            f_z: ctx.spec.objective(&z),
            merit: self.prev_merit,
            residuals,
            z,
            blocks,
            trace: self.trace,
            primal_step_sq: self.step_sq,
            total_clamps: self.clamps,
            aggregation_messages: self.messages,
            flagged_rows: flagged,
            rate_check: None,
            message: self.message,
        }
    }
}

fn run_reference(ctx: &Ctx, mut reps: Vec<Replica>, driver: &mut Driver) -> Result<Vec<Replica>, RuntimeError> {
    let n = reps.len();
    let mut k = 0;
    while driver.wants_iteration() {
        driver.begin();
        let steps: Vec<Step> = reps
            .iter_mut()
            .enumerate()
            .map(|(b, rep)| start_block(ctx, b, rep, k))
            .collect();

        let mut partial = None;
        let mut failed = false;
        for (rep, step) in reps.iter().zip(&steps) {
            let (contribution, weight) = z_contribution(&rep.state, &rep.z, step.tau);
            partial = Some(Partial::hop(partial, contribution, weight));
            failed |= step.failure.is_some();
        }
        let z_new = finalize_z(ctx, partial.as_ref().expect("at least one block"), failed);

        let mut summary = None;
        for (b, (rep, step)) in reps.iter_mut().zip(steps).enumerate() {
            // block b < n-1 sends one forward hop; the last block broadcasts.
            let messages = if b + 1 < n { 1 } else { (n - 1) as u64 };
            let local = finish_block(ctx, b, rep, step, z_new.clone(), k, messages);
            summary = Some(Summary::fold(summary, local));
        }
        let f_z = ctx.spec.objective(&reps[n - 1].z);
        if let Verdict::Stop = driver.complete(k, summary.expect("at least one block"), f_z)? {
            break;
        }
        k += 1;
    }
    Ok(reps)
}

struct Forward {
    partial: Partial,
    failed: bool,
}

enum Command {
    Continue,
    Stop,
}

/// Channel ends held by one block.
struct Endpoint {
    ring_rx: Receiver<Envelope<Forward>>,
    bcast_rx: Receiver<Envelope<Option<Vec<f64>>>>,
    reduce_rx: Receiver<Envelope<Summary>>,
    ring_next: Option<Sender<Envelope<Forward>>>,
    reduce_next: Option<Sender<Envelope<Summary>>>,
    /// Only on the last block: broadcast to every other block, and the
    /// coordinator's reduce inbox.
    bcast_all: Vec<Sender<Envelope<Option<Vec<f64>>>>>,
    to_coordinator: Option<Sender<Envelope<(Summary, f64)>>>,
}

fn build_endpoints(n: usize) -> (Vec<Endpoint>, Receiver<Envelope<(Summary, f64)>>) {
    let (ring_tx, ring_rx): (Vec<_>, Vec<_>) = (0..n).map(|_| mpsc::channel()).unzip();
    let (bcast_tx, bcast_rx): (Vec<_>, Vec<_>) = (0..n).map(|_| mpsc::channel()).unzip();
    let (reduce_tx, reduce_rx): (Vec<_>, Vec<_>) = (0..n).map(|_| mpsc::channel()).unzip();
    let (coord_tx, coord_rx) = mpsc::channel();

    let mut bcast_tx: Vec<_> = bcast_tx.into_iter().take(n - 1).collect();
    let mut coord_tx = Some(coord_tx);
    let endpoints = ring_rx
        .into_iter()
        .zip(bcast_rx)
        .zip(reduce_rx)
        .enumerate()
        .map(|(b, ((ring_rx, bcast_rx), reduce_rx))| {
            let last = b + 1 == n;
            Endpoint {
                ring_rx,
                bcast_rx,
                reduce_rx,
                ring_next: ring_tx.get(b + 1).cloned(),
                reduce_next: reduce_tx.get(b + 1).cloned(),
                bcast_all: if last { std::mem::take(&mut bcast_tx) } else { Vec::new() },
                to_coordinator: if last { coord_tx.take() } else { None },
            }
        })
        .collect();
    (endpoints, coord_rx)
}

fn hung_up(what: &str) -> RingError {
    RingError::Protocol(format!("{what}: receiver hung up"))
}

/// Debug-build check of the phase order P1 -> P2 -> P3/P4 -> P5 per block.
#[derive(Default)]
struct PhaseClock {
    last: u8,
}

impl PhaseClock {
    fn enter(&mut self, phase: u8) {
        debug_assert!(
            phase == self.last + 1 || (phase == 1 && self.last == 5),
            "phase {phase} entered after phase {}",
            self.last
        );
        self.last = phase;
    }
}

fn worker_loop(
    ctx: &Ctx,
    n: usize,
    mut owned: Vec<(usize, Replica, Endpoint)>,
    commands: Receiver<Command>,
) -> Result<Vec<(usize, Replica)>, RingError> {
    let mut clocks: Vec<PhaseClock> = owned.iter().map(|_| PhaseClock::default()).collect();
    let mut k = 0;
    loop {
        let mut steps = Vec::with_capacity(owned.len());
        for ((b, rep, _), clock) in owned.iter_mut().zip(&mut clocks) {
            clock.enter(1);
            steps.push(start_block(ctx, *b, rep, k));
        }

        // P2: ring pass in increasing block order, then wait for Z^{k+1}.
        let mut z_for: Vec<Option<Option<Vec<f64>>>> = vec![None; owned.len()];
        let mut sent = vec![0u64; owned.len()];
        for (t, (b, rep, ep)) in owned.iter().enumerate() {
            clocks[t].enter(2);
            let b = *b;
            let prev = if b == 0 {
                None
            } else {
                Some(expect(&ep.ring_rx, k, b - 1, "ring forward")?)
            };
            let (contribution, weight) = z_contribution(&rep.state, &rep.z, steps[t].tau);
            let failed = steps[t].failure.is_some() || prev.as_ref().is_some_and(|p| p.failed);
            let partial = Partial::hop(prev.map(|p| p.partial), contribution, weight);
            if let Some(next) = &ep.ring_next {
                next.send(Envelope {
                    k,
                    from: b,
                    payload: Forward { partial, failed },
                })
                .map_err(|_| hung_up("ring forward"))?;
                sent[t] += 1;
            } else {
                let z_new = finalize_z(ctx, &partial, failed);
                for tx in &ep.bcast_all {
                    tx.send(Envelope {
                        k,
                        from: b,
                        payload: z_new.clone(),
                    })
                    .map_err(|_| hung_up("broadcast"))?;
                    sent[t] += 1;
                }
                z_for[t] = Some(z_new);
            }
        }
        for (t, (b, _, ep)) in owned.iter().enumerate() {
            if *b + 1 < n {
                z_for[t] = Some(expect(&ep.bcast_rx, k, n - 1, "broadcast")?);
            }
        }

        let mut locals = Vec::with_capacity(owned.len());
        for (t, ((b, rep, _), step)) in owned.iter_mut().zip(steps).enumerate() {
            clocks[t].enter(3);
            let z_new = z_for[t].take().expect("broadcast received");
            locals.push(finish_block(ctx, *b, rep, step, z_new, k, sent[t]));
            clocks[t].enter(4);
        }

        // P5: reduce along the ring; the last block reports to the coordinator.
        for (t, ((b, rep, ep), local)) in owned.iter().zip(locals).enumerate() {
            clocks[t].enter(5);
            let b = *b;
            let prev = if b == 0 {
                None
            } else {
                Some(expect(&ep.reduce_rx, k, b - 1, "reduce")?)
            };
            let acc = Summary::fold(prev, local);
            if let Some(next) = &ep.reduce_next {
                next.send(Envelope { k, from: b, payload: acc })
                    .map_err(|_| hung_up("reduce"))?;
            } else {
                let f_z = ctx.spec.objective(&rep.z);
                ep.to_coordinator
                    .as_ref()
                    .expect("last block reports to the coordinator")
                    .send(Envelope {
                        k,
                        from: b,
                        payload: (acc, f_z),
                    })
                    .map_err(|_| hung_up("coordinator"))?;
            }
        }

        match commands.recv() {
            Ok(Command::Continue) => k += 1,
            Ok(Command::Stop) => break,
            Err(_) => return Err(RingError::Protocol("coordinator hung up".into())),
        }
    }
    Ok(owned.into_iter().map(|(b, rep, _)| (b, rep)).collect())
}

fn run_threads(
    ctx: &Ctx,
    reps: Vec<Replica>,
    topo: Topology,
    driver: &mut Driver,
) -> Result<Vec<Replica>, RuntimeError> {
    let n = reps.len();
    let (endpoints, coord_rx) = build_endpoints(n);
    let mut per_worker: Vec<Vec<(usize, Replica, Endpoint)>> = (0..topo.workers).map(|_| Vec::new()).collect();
    for (b, (rep, ep)) in reps.into_iter().zip(endpoints).enumerate() {
        per_worker[topo.owner(b)].push((b, rep, ep));
    }
    if !driver.wants_iteration() {
        let mut out: Vec<(usize, Replica)> = per_worker
            .into_iter()
            .flatten()
            .map(|(b, rep, _)| (b, rep))
            .collect();
        out.sort_by_key(|(b, _)| *b);
        return Ok(out.into_iter().map(|(_, r)| r).collect());
    }

    thread::scope(|s| {
        let mut commands = Vec::with_capacity(topo.workers);
        let mut handles = Vec::with_capacity(topo.workers);
        for owned in per_worker {
            let (tx, rx) = mpsc::channel();
            commands.push(tx);
            handles.push(s.spawn(move || worker_loop(ctx, n, owned, rx)));
        }

        let mut k = 0;
        let mut outcome: Result<(), RuntimeError> = Ok(());
        driver.begin();
        loop {
            let msg = match expect(&coord_rx, k, n - 1, "coordinator") {
                Ok(m) => m,
                Err(e) => {
                    outcome = Err(e.into());
                    break;
                }
            };
            let (summary, f_z) = msg;
            let verdict = match driver.complete(k, summary, f_z) {
                Ok(v) => v,
                Err(e) => {
                    outcome = Err(e);
                    Verdict::Stop
                }
            };
            let cmd = || match verdict {
                Verdict::Continue => Command::Continue,
                Verdict::Stop => Command::Stop,
            };
            for tx in &commands {
                // A worker that already exited reports its error through join.
                let _ = tx.send(cmd());
            }
            if let Verdict::Stop = verdict {
                break;
            }
            k += 1;
            driver.begin();
        }
        drop(commands);

        let mut out = Vec::with_capacity(n);
        for h in handles {
            match h.join().expect("worker thread panicked") {
                Ok(blocks) => out.extend(blocks),
                Err(e) => {
                    if outcome.is_ok() {
                        outcome = Err(e.into());
                    }
                }
            }
        }
        outcome?;
        out.sort_by_key(|(b, _)| *b);
        Ok(out.into_iter().map(|(_, r)| r).collect())
    })
}
