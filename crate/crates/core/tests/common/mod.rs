//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use audiocause::signal::{forward, inverse, mask};
use audiocause::{BinSet, Classification, ClassifierHandle, Spectrum, TimeSignal};
use rand::seq::SliceRandom;
use rand::Rng;
use realfft::num_complex::Complex64;

/// Small spectrum plus a monotone threshold classifier over its bin magnitudes:
/// "on" iff `Σ weights[b]·|X_b| ≥ tau` for at least `min_count` relevant bins'
/// worth of mass.
#[derive(Debug, Clone)]
pub struct ToyInstance {
    pub spectrum: Spectrum,
    pub weights: Vec<f64>,
    pub tau: f64,
    pub relevant: Vec<usize>,
}

pub const ON: &str = "on";
pub const OFF: &str = "off";

fn toy_label(weights: &[f64], tau: f64, signal: &TimeSignal) -> &'static str {
    let spec = forward(signal);
    let mass: f64 = spec.bins().iter().zip(weights).map(|(c, w)| c.norm() * w).sum();
    if mass >= tau {
        ON
    } else {
        OFF
    }
}

impl ToyInstance {
    /// Random instance with `bins` bins. Either a conjunction (every relevant
    /// bin needed, weak distractor weight elsewhere) or a `k`-of-`r` vote.
    pub fn random(rng: &mut impl Rng, bins: usize) -> ToyInstance {
        let n = 2 * (bins - 1);
        let mut coeffs = Vec::with_capacity(bins);
        for k in 0..bins {
            let m = rng.gen_range(0.5..1.5);
            let phase = if k == 0 || k == bins - 1 {
                0.0
            } else {
                rng.gen_range(0.0..2.0 * PI)
            };
            coeffs.push(Complex64::from_polar(m, phase));
        }
        // Go through the time domain so the spectrum is exactly what the
        // classifier will see for the unmasked signal.
        let raw = Spectrum::from_bins(coeffs, n, n as u32).unwrap();
        let spectrum = forward(&inverse(&raw));
        let mags = spectrum.magnitudes();

        let mut order: Vec<usize> = (0..bins).collect();
        order.shuffle(rng);
        let r = rng.gen_range(1..=4.min(bins - 1));
        let mut relevant = order[..r].to_vec();
        relevant.sort_unstable();
        let mut weights = vec![0.0; bins];
        let tau;
        if r >= 2 && rng.gen_bool(0.25) {
            // k-of-r vote: each relevant bin contributes exactly 1.
            let k = rng.gen_range(1..r);
            for &b in &relevant {
                weights[b] = 1.0 / mags[b];
            }
            tau = k as f64 - 0.5;
        } else {
            for &b in &relevant {
                weights[b] = rng.gen_range(0.5..1.5);
            }
            let contrib: Vec<f64> = relevant.iter().map(|&b| weights[b] * mags[b]).collect();
            let min_c = contrib.iter().copied().fold(f64::INFINITY, f64::min);
            tau = contrib.iter().sum::<f64>() - 0.5 * min_c;
            // Distractors together stay far below what one relevant bin adds.
            let others: Vec<usize> = order[r..].to_vec();
            let budget = 0.2 * min_c;
            for &b in &others {
                if rng.gen_bool(0.5) {
                    weights[b] = budget / (others.len() as f64 * mags[b]);
                }
            }
        }
        ToyInstance {
            spectrum,
            weights,
            tau,
            relevant,
        }
    }

    pub fn bins(&self) -> usize {
        self.spectrum.len()
    }

    pub fn handle(&self) -> ClassifierHandle {
        let (weights, tau) = (self.weights.clone(), self.tau);
        ClassifierHandle::from_fn(move |s: &TimeSignal| Classification::new(toy_label(&weights, tau, s), 0.9))
    }

    pub fn passes(&self, subset: &BinSet) -> bool {
        toy_label(
            &self.weights,
            self.tau,
            &inverse(&mask(&self.spectrum, subset).unwrap()),
        ) == ON
    }

    pub fn full_label(&self) -> &'static str {
        toy_label(&self.weights, self.tau, &inverse(&self.spectrum))
    }
}

/// Exhaustive analysis over all `2^n` bin subsets: minimal sufficient sets
/// and the responsibility each bin earns from them.
pub struct BruteForce {
    pub minimal_sufficient: Vec<BinSet>,
    /// `1 / |S|` for the smallest minimal sufficient `S` containing the bin.
    pub responsibility: Vec<f64>,
}

fn to_set(mask: usize, n: usize) -> BinSet {
    (0..n).filter(|b| mask & (1 << b) != 0).collect()
}

pub fn brute_force(n: usize, passes: impl Fn(&BinSet) -> bool) -> BruteForce {
    let total = 1usize << n;
    let pass: Vec<bool> = (0..total).map(|m| passes(&to_set(m, n))).collect();
    let mut minimal = Vec::new();
    for m in 1..total {
        if !pass[m] {
            continue;
        }
        // Any passing strict subset disqualifies.
        let mut sub = (m - 1) & m;
        let mut is_min = !pass[0];
        while sub != 0 && is_min {
            if pass[sub] {
                is_min = false;
            }
            sub = (sub - 1) & m;
        }
        if is_min {
            minimal.push(m);
        }
    }
    let mut responsibility = vec![0.0; n];
    for &m in &minimal {
        let credit = 1.0 / m.count_ones() as f64;
        for (b, r) in responsibility.iter_mut().enumerate() {
            if m & (1 << b) != 0 && credit > *r {
                *r = credit;
            }
        }
    }
    BruteForce {
        minimal_sufficient: minimal.into_iter().map(|m| to_set(m, n)).collect(),
        responsibility,
    }
}

/// Minimum-cost transport between two histograms with ground cost `|i - j|`,
/// by successive shortest paths (Bellman-Ford) on the bipartite flow network.
/// Both inputs are scaled to unit mass first.
pub fn transport_cost(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let sa: f64 = a.iter().sum();
    let sb: f64 = b.iter().sum();
    let supply: Vec<f64> = a.iter().map(|x| x / sa).collect();
    let demand: Vec<f64> = b.iter().map(|x| x / sb).collect();

    // Nodes: 0 = source, 1..=n supplies, n+1..=2n demands, 2n+1 = sink.
    let nodes = 2 * n + 2;
    let (source, sink) = (0, 2 * n + 1);
    struct Edge {
        to: usize,
        cap: f64,
        cost: f64,
    }
    let mut edges: Vec<Edge> = Vec::new();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nodes];
    let mut add = |edges: &mut Vec<Edge>, u: usize, v: usize, cap: f64, cost: f64| {
        adj[u].push(edges.len());
        edges.push(Edge { to: v, cap, cost });
        adj[v].push(edges.len());
        edges.push(Edge {
            to: u,
            cap: 0.0,
            cost: -cost,
        });
    };
    for i in 0..n {
        add(&mut edges, source, 1 + i, supply[i], 0.0);
        add(&mut edges, 1 + n + i, sink, demand[i], 0.0);
        for j in 0..n {
            add(&mut edges, 1 + i, 1 + n + j, f64::INFINITY, (i as f64 - j as f64).abs());
        }
    }

    const EPS: f64 = 1e-15;
    let mut cost = 0.0;
    loop {
        let mut dist = vec![f64::INFINITY; nodes];
        let mut via: Vec<Option<usize>> = vec![None; nodes];
        dist[source] = 0.0;
        for _ in 0..nodes {
            let mut changed = false;
            for u in 0..nodes {
                if dist[u].is_infinite() {
                    continue;
                }
                for &e in &adj[u] {
                    let edge = &edges[e];
                    if edge.cap > EPS && dist[u] + edge.cost < dist[edge.to] - 1e-12 {
                        dist[edge.to] = dist[u] + edge.cost;
                        via[edge.to] = Some(e);
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        if dist[sink].is_infinite() {
            break;
        }
        let mut push = f64::INFINITY;
        let mut v = sink;
        while let Some(e) = via[v] {
            push = push.min(edges[e].cap);
            v = edges[e ^ 1].to;
        }
        let mut v = sink;
        while let Some(e) = via[v] {
            edges[e].cap -= push;
            edges[e ^ 1].cap += push;
            v = edges[e ^ 1].to;
        }
        cost += push * dist[sink];
    }
    cost
}
