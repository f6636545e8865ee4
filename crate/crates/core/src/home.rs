//! Home location inference: density clustering of night-time sightings.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{GeoPoint, EARTH_RADIUS_M};
use crate::ingest::{DateRange, DeviceTrajectory, SightingRecord};

/// Local clock second at which the night window opens (19:00, inclusive).
pub const NIGHT_START_S: i64 = 19 * 3600;
/// Local clock second at which the night window closes (07:00, exclusive).
pub const NIGHT_END_S: i64 = 7 * 3600;

pub fn is_night(s: &SightingRecord) -> bool {
    let t = s.local_seconds_of_day();
    t >= NIGHT_START_S || t < NIGHT_END_S
}

/// Night sightings (19:00 ≤ local time or local time < 07:00) inside `month`.
pub fn night_window(traj: &DeviceTrajectory, month: DateRange) -> Vec<&SightingRecord> {
    traj.slice_in(month).iter().filter(|s| is_night(s)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HomeParams {
    pub eps_m: f64,
    pub min_pts: usize,
}

impl Default for HomeParams {
    fn default() -> Self {
        Self { eps_m: 150.0, min_pts: 5 }
    }
}

/// Cluster assignment for one point; `None` is noise.
pub type ClusterLabel = Option<usize>;

struct Prepared {
    phi: f64,
    lambda: f64,
    cos_phi: f64,
}

/// Neighbor search over points sorted by latitude. Great-circle distance is
/// never below the meridional separation, so a latitude band of ±eps bounds
/// the candidates exactly.
struct LatIndex {
    prepared: Vec<Prepared>,
    order: Vec<usize>,
    sorted_phi: Vec<f64>,
    band: f64,
    hav_eps: f64,
}

impl LatIndex {
    fn new(points: &[GeoPoint], eps_m: f64) -> Self {
        let prepared: Vec<Prepared> = points
            .iter()
            .map(|p| {
                let phi = p.lat.to_radians();
                Prepared { phi, lambda: p.lon.to_radians(), cos_phi: phi.cos() }
            })
            .collect();
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_by(|&a, &b| prepared[a].phi.total_cmp(&prepared[b].phi).then(a.cmp(&b)));
        let sorted_phi = order.iter().map(|&i| prepared[i].phi).collect();
        let angle = eps_m / EARTH_RADIUS_M;
        Self {
            prepared,
            order,
            sorted_phi,
            band: angle * (1.0 + 1e-9),
            hav_eps: (angle * 0.5).sin().powi(2),
        }
    }

    fn within(&self, i: usize, j: usize) -> bool {
        let (a, b) = (&self.prepared[i], &self.prepared[j]);
        let h = ((b.phi - a.phi) * 0.5).sin().powi(2)
            + a.cos_phi * b.cos_phi * ((b.lambda - a.lambda) * 0.5).sin().powi(2);
        h <= self.hav_eps
    }

    /// Indices within eps of `i`, including `i`, in ascending index order.
    fn region(&self, i: usize, out: &mut Vec<usize>) {
        out.clear();
        let phi = self.prepared[i].phi;
        let lo = self.sorted_phi.partition_point(|&p| p < phi - self.band);
        let hi = self.sorted_phi.partition_point(|&p| p <= phi + self.band);
        out.extend(self.order[lo..hi].iter().copied().filter(|&j| j == i || self.within(i, j)));
        out.sort_unstable();
    }
}

/// DBSCAN under great-circle distance.
///
/// A point is core when at least `min_pts` points (itself included) lie within
/// `eps_m`. Clusters are numbered in discovery order, scanning points by
/// index; a border point reachable from several clusters joins the first one
/// discovered.
pub fn dbscan(points: &[GeoPoint], eps_m: f64, min_pts: usize) -> Vec<ClusterLabel> {
    #[derive(Clone, Copy, PartialEq)]
    enum State {
        Unvisited,
        Noise,
        Member(usize),
    }

    let n = points.len();
    let index = LatIndex::new(points, eps_m);
    let mut state = vec![State::Unvisited; n];
    let mut next_cluster = 0;
    let mut neighbors = Vec::new();
    let mut frontier: Vec<usize> = Vec::new();

    for i in 0..n {
        if state[i] != State::Unvisited {
            continue;
        }
        index.region(i, &mut neighbors);
        if neighbors.len() < min_pts {
            state[i] = State::Noise;
            continue;
        }
        let c = next_cluster;
        next_cluster += 1;
        state[i] = State::Member(c);
        frontier.clear();
        frontier.extend(neighbors.iter().copied().filter(|&j| j != i));
        while let Some(q) = frontier.pop() {
            match state[q] {
                State::Noise => state[q] = State::Member(c),
                State::Unvisited => {
                    state[q] = State::Member(c);
                    index.region(q, &mut neighbors);
                    if neighbors.len() >= min_pts {
                        frontier.extend(
                            neighbors.iter().copied().filter(|&j| matches!(state[j], State::Unvisited | State::Noise)),
                        );
                    }
                }
                State::Member(_) => {}
            }
        }
    }

    state
        .into_iter()
        .map(|s| match s {
            State::Member(c) => Some(c),
            _ => None,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomeEstimate {
    pub device_id: String,
    pub home: GeoPoint,
    pub night_sighting_count: usize,
    pub cluster_count: usize,
    pub winning_cluster_size: usize,
    /// `winning_cluster_size / night_sighting_count`.
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HomeError {
    #[error("insufficient night data: {night_sightings} sightings, {clusters} clusters")]
    InsufficientData { night_sightings: usize, clusters: usize },
}

/// Home = mean of the largest night-time cluster. Equal-size clusters are
/// broken by the earliest member sighting.
pub fn infer_home(traj: &DeviceTrajectory, month: DateRange, params: &HomeParams) -> Result<HomeEstimate, HomeError> {
    let night = night_window(traj, month);
    let insufficient = |clusters| HomeError::InsufficientData { night_sightings: night.len(), clusters };
    if night.len() < params.min_pts || night.is_empty() {
        return Err(insufficient(0));
    }
    let points: Vec<GeoPoint> = night.iter().map(|s| s.point()).collect();
    let labels = dbscan(&points, params.eps_m, params.min_pts);
    let cluster_count = labels.iter().flatten().max().map_or(0, |m| m + 1);
    if cluster_count == 0 {
        return Err(insufficient(0));
    }

    // (size, earliest timestamp, earliest index) per cluster.
    let mut stats = vec![(0usize, i64::MAX, usize::MAX); cluster_count];
    for (i, label) in labels.iter().enumerate() {
        if let Some(c) = *label {
            let entry = &mut stats[c];
            entry.0 += 1;
            if (night[i].timestamp, i) < (entry.1, entry.2) {
                entry.1 = night[i].timestamp;
                entry.2 = i;
            }
        }
    }
    let winner = (0..cluster_count)
        .min_by(|&a, &b| {
            stats[b].0.cmp(&stats[a].0).then((stats[a].1, stats[a].2).cmp(&(stats[b].1, stats[b].2)))
        })
        .expect("at least one cluster");

    let members: Vec<GeoPoint> = labels
        .iter()
        .zip(&points)
        .filter(|(l, _)| **l == Some(winner))
        .map(|(_, p)| *p)
        .collect();
    let home = GeoPoint::centroid(&members).expect("winning cluster is non-empty");
    Ok(HomeEstimate {
        device_id: traj.device_id.clone(),
        home,
        night_sighting_count: night.len(),
        cluster_count,
        winning_cluster_size: members.len(),
        confidence: members.len() as f64 / night.len() as f64,
    })
}
