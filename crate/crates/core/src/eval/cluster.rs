//! Cluster-quality indices over labeled embeddings, Euclidean metric.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub silhouette: f64,
    pub calinski_harabasz: f64,
    pub davies_bouldin: f64,
    pub samples: usize,
    pub classes: usize,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn centroid(points: &[&[f64]]) -> Vec<f64> {
    let mut c = vec![0.0; points[0].len()];
    for p in points {
        for (ci, v) in c.iter_mut().zip(p.iter()) {
            *ci += v;
        }
    }
    c.iter_mut().for_each(|v| *v /= points.len() as f64);
    c
}

pub fn cluster_metrics(points: &[Vec<f64>], labels: &[usize]) -> Result<ClusterReport> {
    if points.len() != labels.len() || points.is_empty() {
        return Err(Error::Eval("one label per point required".into()));
    }
    let dim = points[0].len();
    if dim == 0 || points.iter().any(|p| p.len() != dim || p.iter().any(|v| !v.is_finite())) {
        return Err(Error::Eval("points must share a positive dimension and be finite".into()));
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let members: Vec<Vec<usize>> = (0..k)
        .map(|c| (0..labels.len()).filter(|&i| labels[i] == c).collect())
        .filter(|m: &Vec<usize>| !m.is_empty())
        .collect();
    if members.len() < 2 || members.iter().any(|m| m.len() < 2) {
        return Err(Error::Eval("need at least 2 classes with at least 2 members each".into()));
    }
    let n = points.len();
    let cls_of: Vec<usize> = {
        let mut v = vec![0; n];
        for (c, m) in members.iter().enumerate() {
            for &i in m {
                v[i] = c;
            }
        }
        v
    };

    let mut silhouette = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; members.len()];
        for j in 0..n {
            if j != i {
                sums[cls_of[j]] += dist(&points[i], &points[j]);
            }
        }
        let own = cls_of[i];
        let a = sums[own] / (members[own].len() - 1) as f64;
        let b = (0..members.len())
            .filter(|&c| c != own)
            .map(|c| sums[c] / members[c].len() as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom == 0.0 {
            return Err(Error::Eval("silhouette undefined: coincident points across classes".into()));
        }
        silhouette += (b - a) / denom;
    }
    silhouette /= n as f64;

    let all: Vec<&[f64]> = points.iter().map(|p| p.as_slice()).collect();
    let overall = centroid(&all);
    let centroids: Vec<Vec<f64>> = members
        .iter()
        .map(|m| centroid(&m.iter().map(|&i| points[i].as_slice()).collect::<Vec<_>>()))
        .collect();
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let between: f64 = members
        .iter()
        .zip(&centroids)
        .map(|(m, c)| m.len() as f64 * sq(c, &overall))
        .sum();
    let within: f64 = members
        .iter()
        .zip(&centroids)
        .map(|(m, c)| m.iter().map(|&i| sq(&points[i], c)).sum::<f64>())
        .sum();
    let kf = members.len() as f64;
    if within == 0.0 {
        return Err(Error::Eval("within-class dispersion is zero".into()));
    }
    let calinski_harabasz = (between / (kf - 1.0)) / (within / (n as f64 - kf));

    let scatter: Vec<f64> = members
        .iter()
        .zip(&centroids)
        .map(|(m, c)| m.iter().map(|&i| dist(&points[i], c)).sum::<f64>() / m.len() as f64)
        .collect();
    let mut davies_bouldin = 0.0;
    for i in 0..members.len() {
        let mut worst = f64::NEG_INFINITY;
        for j in 0..members.len() {
            if i != j {
                let d = dist(&centroids[i], &centroids[j]);
                if d == 0.0 {
                    return Err(Error::Eval("two class centroids coincide".into()));
                }
                worst = worst.max((scatter[i] + scatter[j]) / d);
            }
        }
        davies_bouldin += worst;
    }
    davies_bouldin /= kf;

    Ok(ClusterReport {
        silhouette,
        calinski_harabasz,
        davies_bouldin,
        samples: n,
        classes: members.len(),
    })
}
