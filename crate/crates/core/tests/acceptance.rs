//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any
//! FAIL. Runs under `cargo test` with its own harness.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sqconn::conflict::{boxes_meeting_boundary_of, boxes_minus, Box5, ConflictTree, Point5};
use sqconn::engine::Engine;
use sqconn::geometry::{Rect, Square, SquareId};
use sqconn::hlt::Hlt;
use sqconn::oracle::Oracle;
use sqconn::replay::{replay_ops, ReplayOptions};
use sqconn::trace::{Mix, TraceOp};
use sqconn::workload::{aspect_spike, generate, GenParams};

type Criterion = (&'static str, fn() -> Verdict, Duration);

enum Verdict {
    Pass(String),
    Warn(String),
    Fail(String),
}

fn mix_45_25_30() -> Mix {
    "45:25:30".parse().unwrap()
}

fn numbered(ops: Vec<TraceOp>) -> Vec<(usize, TraceOp)> {
    ops.into_iter().enumerate().map(|(i, o)| (i + 1, o)).collect()
}

fn oracle_equivalence() -> Verdict {
    let (mut queries, mut trues, mut mismatches) = (0, 0, 0);
    for w in 0..50u64 {
        let p = GenParams {
            n: 0,
            ops: 2000,
            psi_max: 1 << (w % 11),
            seed: 1000 + w,
            mix: mix_45_25_30(),
            box_side: None,
        };
        let ops = numbered(generate(&p).unwrap());
        let opts = ReplayOptions { check: true, check_deep: false };
        let r = replay_ops(&ops, opts).unwrap();
        queries += r.answers.len();
        trues += r.answers.iter().filter(|a| **a).count();
        mismatches += r.mismatches.len();
        if let Some(m) = r.mismatches.first() {
            eprintln!("workload {w}: {m}");
        }
    }
    let detail = format!("{queries} queries, {trues} true, {mismatches} mismatches");
    if mismatches == 0 { Verdict::Pass(detail) } else { Verdict::Fail(detail) }
}

/// The 20 small workloads shared by the structural and matching criteria.
fn small_workloads() -> Vec<Vec<TraceOp>> {
    (0..20u64)
        .map(|w| {
            let p = GenParams {
                n: 40,
                ops: 400,
                psi_max: 1 << (w % 8),
                seed: 2000 + w,
                mix: mix_45_25_30(),
                box_side: None,
            };
            generate(&p).unwrap()
        })
        .collect()
}

/// Drive engine and oracle in lockstep, calling `check` after every update.
fn lockstep(
    ops: &[TraceOp],
    mut check: impl FnMut(&Engine, &Oracle) -> Result<(), String>,
) -> Result<(usize, usize), String> {
    let mut e = Engine::new();
    let mut o = Oracle::new();
    let (mut updates, mut max_n) = (0, 0);
    for (i, op) in ops.iter().enumerate() {
        match *op {
            TraceOp::Insert { id, x, y, side } => {
                let sq = Square::from_input(id, x, y, side).unwrap();
                e.insert(sq).unwrap();
                o.insert(sq).unwrap();
            }
            TraceOp::Delete { id } => {
                e.delete(SquareId(id)).unwrap();
                o.delete(SquareId(id)).unwrap();
            }
            TraceOp::Query { .. } => continue,
        }
        updates += 1;
        max_n = max_n.max(e.len());
        check(&e, &o).map_err(|m| format!("op {}: {m}", i + 1))?;
    }
    Ok((updates, max_n))
}

fn structural_sets() -> Verdict {
    let (mut updates, mut max_n) = (0, 0);
    for (w, ops) in small_workloads().iter().enumerate() {
        match lockstep(ops, |e, o| e.check_deep(o)) {
            Ok((u, n)) => {
                updates += u;
                max_n = max_n.max(n);
            }
            Err(m) => return Verdict::Fail(format!("workload {w}: {m}")),
        }
    }
    if max_n > 200 {
        return Verdict::Fail(format!("workloads reached n = {max_n}"));
    }
    Verdict::Pass(format!("{updates} updates checked, n <= {max_n}"))
}

fn matching_maximality() -> Verdict {
    let (mut updates, mut edges) = (0, 0);
    for (w, ops) in small_workloads().iter().enumerate() {
        let r = lockstep(ops, |e, o| {
            edges += e.matching().edge_count();
            o.o_check_matchings(&e.matching().snapshot())
        });
        match r {
            Ok((u, _)) => updates += u,
            Err(m) => return Verdict::Fail(format!("workload {w}: {m}")),
        }
    }
    Verdict::Pass(format!("{updates} updates, {edges} matched edges inspected"))
}

fn random_box(rng: &mut ChaCha8Rng, span: i64) -> Box5 {
    let mut b = Box5::all();
    for d in 0..5 {
        match rng.random_range(0..5) {
            0 => {}
            1 => b = b.at_least(d, rng.random_range(-2..span)),
            2 => b = b.at_most(d, rng.random_range(-2..span)),
            3 => {
                // Degenerate: a single coordinate value.
                let v = rng.random_range(0..span);
                b = b.at_least(d, v).at_most(d, v);
            }
            _ => {
                let (a, c) = (rng.random_range(0..span), rng.random_range(0..span));
                b = b.at_least(d, a).at_most(d, c);
            }
        }
    }
    b
}

fn conflict_tree_equivalence() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut cases = 0;
    let mut tree: ConflictTree<u64> = ConflictTree::new();
    let mut model: Vec<(u64, Point5, BTreeSet<u64>)> = Vec::new();
    let mut next = 0u64;
    let span = 40;
    while cases < 10_000 {
        // A few mutations per round; clearing at 300 entries makes small and
        // empty states recur.
        for _ in 0..rng.random_range(1..6) {
            let r = rng.random_range(0..10);
            if r < 5 || model.is_empty() {
                let (s, x, y) = (rng.random_range(1..10), rng.random_range(0..span), rng.random_range(0..span));
                let p = [s, x, x + s, y, y + s];
                tree.insert(next, p).unwrap();
                model.push((next, p, BTreeSet::new()));
                next += 1;
            } else if r < 7 {
                let (k, _, _) = model.swap_remove(rng.random_range(0..model.len()));
                tree.delete(&k).unwrap();
            } else {
                let i = rng.random_range(0..model.len());
                let set = rng.random_range(0..4);
                let (k, _, sets) = &mut model[i];
                if sets.insert(set) {
                    tree.join(k, set).unwrap();
                } else {
                    sets.remove(&set);
                    tree.leave(k, set).unwrap();
                }
            }
        }
        if model.len() > 300 {
            for (k, _, _) in model.drain(..) {
                tree.delete(&k).unwrap();
            }
        }
        for _ in 0..4 {
            cases += 1;
            let boxes: Vec<Box5> = match rng.random_range(0..3) {
                0 => vec![random_box(&mut rng, span)],
                1 => boxes_minus(&[random_box(&mut rng, span)], &[random_box(&mut rng, span)]),
                _ => {
                    let (x, y) = (rng.random_range(0..span), rng.random_range(0..span));
                    let s = rng.random_range(0..12);
                    boxes_meeting_boundary_of(&Rect::new(x, x + s, y, y + s))
                }
            };
            let inside = |p: &Point5| boxes.iter().any(|b| b.contains_point(p));
            let want: Vec<(u64, Point5)> = {
                let mut v: Vec<_> = model.iter().filter(|(_, p, _)| inside(p)).map(|(k, p, _)| (*k, *p)).collect();
                v.sort();
                v
            };
            if tree.report_all(&boxes) != want {
                return Verdict::Fail(format!("report_all differs on {boxes:?}"));
            }
            if tree.count(&boxes) != want.len() {
                return Verdict::Fail(format!("count differs on {boxes:?}"));
            }
            let set = rng.random_bool(0.7).then(|| rng.random_range(0..4));
            let eligible: Vec<u64> = model
                .iter()
                .filter(|(_, p, sets)| inside(p) && set.is_none_or(|s| !sets.contains(&s)))
                .map(|(k, _, _)| *k)
                .collect();
            match tree.find_excluding(&boxes, set) {
                None if eligible.is_empty() => {}
                Some((k, _)) if eligible.contains(&k) => {}
                got => return Verdict::Fail(format!("find_excluding gave {got:?}, eligible {eligible:?}")),
            }
        }
    }
    if let Err(e) = tree.check_counts() {
        return Verdict::Fail(e);
    }
    Verdict::Pass(format!("{cases} cases, {} rebuilds", tree.rebuilds()))
}

fn uf_connected(n: usize, edges: &BTreeSet<(u32, u32)>, a: u32, b: u32) -> bool {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for &(u, v) in edges {
        let (ru, rv) = (find(&mut parent, u as usize), find(&mut parent, v as usize));
        parent[ru] = rv;
    }
    find(&mut parent, a as usize) == find(&mut parent, b as usize)
}

fn hlt_self_test() -> Verdict {
    const N: u32 = 500;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut h = Hlt::new();
    for v in 0..N {
        h.add_vertex(v).unwrap();
    }
    let mut edges: BTreeSet<(u32, u32)> = BTreeSet::new();
    let mut edge_list: Vec<(u32, u32)> = Vec::new();
    let mut queries = 0;
    for step in 0..100_000u32 {
        // Keep the edge count hovering around N so components keep merging and splitting.
        if edge_list.len() < N as usize && rng.random_bool(0.55) || edge_list.is_empty() {
            let (u, v) = (rng.random_range(0..N), rng.random_range(0..N));
            let e = (u.min(v), u.max(v));
            if u != v && edges.insert(e) {
                h.insert_edge(e.0, e.1).unwrap();
                edge_list.push(e);
            }
        } else {
            let e = edge_list.swap_remove(rng.random_range(0..edge_list.len()));
            edges.remove(&e);
            h.delete_edge(e.0, e.1).unwrap();
        }
        {
            let (a, b) = (rng.random_range(0..N), rng.random_range(0..N));
            queries += 1;
            if h.connected(a, b).unwrap() != uf_connected(N as usize, &edges, a, b) {
                return Verdict::Fail(format!("connected({a}, {b}) wrong at step {step}"));
            }
        }
        if step % 500 == 0 {
            if let Err(e) = h.check_invariants() {
                return Verdict::Fail(format!("step {step}: {e}"));
            }
        }
    }
    if let Err(e) = h.check_invariants() {
        return Verdict::Fail(e);
    }
    Verdict::Pass(format!("100000 updates, {queries} queries, {} replacement touches", h.touches()))
}

/// Quadtree nodes and matched edges after `n` inserts and `n` churn updates.
fn steady_state(n: usize, psi: u64, seed: u64) -> (usize, usize) {
    let p = GenParams {
        n,
        ops: n,
        psi_max: psi,
        seed,
        mix: "1:1:0".parse().unwrap(),
        box_side: None,
    };
    let r = replay_ops(&numbered(generate(&p).unwrap()), ReplayOptions::default()).unwrap();
    (r.summary.final_state.quadtree_nodes, r.summary.final_state.matched_edges)
}

fn space_trend() -> Verdict {
    let mut lines = Vec::new();
    let mut ok = true;
    let by_n: Vec<(usize, (usize, usize))> = [1 << 10, 1 << 11, 1 << 12]
        .into_iter()
        .map(|n| (n, steady_state(n, 1 << 6, 6)))
        .collect();
    for w in by_n.windows(2) {
        let (n0, (v0, z0)) = w[0];
        let (n1, (v1, z1)) = w[1];
        let (rv, rz) = (v1 as f64 / v0 as f64, z1 as f64 / z0.max(1) as f64);
        ok &= rv <= 2.5 && rz <= 2.5;
        lines.push(format!("n {n0}->{n1}: nodes x{rv:.2}, z* x{rz:.2}"));
    }
    let by_psi: Vec<(u32, usize)> = [2u32, 6, 10]
        .into_iter()
        .map(|k| (k, steady_state(1 << 11, 1 << k, 6).0))
        .collect();
    for w in by_psi.windows(2) {
        let (k0, v0) = w[0];
        let (k1, v1) = w[1];
        // Nodes per unit of log2 ψ may grow by at most 2x per step.
        let r = (v1 as f64 / k1 as f64) / (v0 as f64 / k0 as f64);
        ok &= r <= 2.0;
        lines.push(format!("log psi {k0}->{k1}: nodes {v0}->{v1}, per-log x{r:.2}"));
    }
    let detail = lines.join("; ");
    if ok { Verdict::Pass(detail) } else { Verdict::Fail(detail) }
}

fn adaptivity() -> Verdict {
    let n = 10_000;
    let ops = aspect_spike(n, 1 << 13, 7, None).unwrap();
    let mut e = Engine::new();
    let mut worst = 0;
    let mut psi_during = 0f64;
    for (i, op) in ops.iter().enumerate() {
        match *op {
            TraceOp::Insert { id, x, y, side } => e.insert_input(id, x, y, side).unwrap(),
            TraceOp::Delete { id } => e.delete(SquareId(id)).unwrap(),
            TraceOp::Query { .. } => unreachable!(),
        }
        if (3..3 + n).contains(&i) {
            let w = e.last_update();
            worst = worst.max(w.contained + w.perimeter);
            psi_during = psi_during.max(w.psi);
        }
    }
    let detail = format!("max |C|+|P| = {worst} over {n} inserts, psi during = {psi_during}, final psi = {}", e.psi());
    if worst <= 64 { Verdict::Pass(detail) } else { Verdict::Fail(detail) }
}

fn performance_smoke() -> Verdict {
    let p = GenParams {
        n: 0,
        ops: 100_000,
        psi_max: 1 << 4,
        seed: 8,
        mix: mix_45_25_30(),
        box_side: None,
    };
    let ops = numbered(generate(&p).unwrap());
    let t = Instant::now();
    let r = replay_ops(&ops, ReplayOptions::default()).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let detail = format!("{} ops in {secs:.2}s, final n = {}", r.summary.ops, r.summary.final_state.n);
    if secs <= 30.0 {
        Verdict::Pass(detail)
    } else if secs <= 60.0 {
        Verdict::Warn(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("oracle equivalence", oracle_equivalence, Duration::from_secs(300)),
        ("structural-set equivalence", structural_sets, Duration::from_secs(180)),
        ("matching maximality", matching_maximality, Duration::from_secs(180)),
        ("conflict tree equivalence", conflict_tree_equivalence, Duration::from_secs(60)),
        ("HLT self-test", hlt_self_test, Duration::from_secs(120)),
        ("space trend", space_trend, Duration::from_secs(240)),
        ("adaptivity", adaptivity, Duration::from_secs(60)),
        ("performance smoke", performance_smoke, Duration::from_secs(60)),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run, budget)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let t = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Verdict::Fail(format!("panicked: {msg}"))
        });
        let took = t.elapsed();
        let over = if took > *budget { format!(", over {}s budget", budget.as_secs()) } else { String::new() };
        let (tag, detail) = match verdict {
            Verdict::Pass(d) => ("PASS", d),
            Verdict::Warn(d) => ("PASS (slow)", d),
            Verdict::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {} {name}: {tag} [{:.1}s{over}] {detail}", i + 1, took.as_secs_f64());
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
