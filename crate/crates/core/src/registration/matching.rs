use crate::descriptors::LocalKeypoint;

/// Default Lowe ratio; loose because baseline descriptors carry little entropy.
pub const DEFAULT_LOWE_RATIO: f64 = 0.95;

/// One putative keypoint match.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub query: usize,
    pub candidate: usize,
    pub distance: f64,
}

/// Putative matches; each query index appears at most once.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorrespondenceSet {
    pub pairs: Vec<Correspondence>,
}

impl CorrespondenceSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

fn descriptor_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mutual nearest neighbours in descriptor space that also pass the ratio
/// test `best ≤ ratio · second_best` on the query side. Sorted by ascending
/// descriptor distance, then query index.
pub fn match_keypoints(
    query: &[LocalKeypoint],
    candidate: &[LocalKeypoint],
    ratio: f64,
) -> CorrespondenceSet {
    if query.is_empty() || candidate.is_empty() {
        return CorrespondenceSet::default();
    }
    let m = candidate.len();
    let dist: Vec<f64> = query
        .iter()
        .flat_map(|q| {
            candidate
                .iter()
                .map(move |c| descriptor_distance(q.descriptor(), c.descriptor()))
        })
        .collect();

    // nearest query for every candidate (ties → lower index)
    let mut best_query = vec![(f64::INFINITY, usize::MAX); m];
    for (qi, row) in dist.chunks(m).enumerate() {
        for (ci, &d) in row.iter().enumerate() {
            if d < best_query[ci].0 {
                best_query[ci] = (d, qi);
            }
        }
    }

    let mut pairs = Vec::new();
    for (qi, row) in dist.chunks(m).enumerate() {
        let (mut best, mut second) = ((f64::INFINITY, usize::MAX), f64::INFINITY);
        for (ci, &d) in row.iter().enumerate() {
            if d < best.0 {
                second = best.0;
                best = (d, ci);
            } else if d < second {
                second = d;
            }
        }
        let (d, ci) = best;
        if best_query[ci].1 != qi {
            continue;
        }
        if second.is_finite() && d > ratio * second {
            continue;
        }
        pairs.push(Correspondence {
            query: qi,
            candidate: ci,
            distance: d,
        });
    }
    pairs.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.query.cmp(&b.query)));
    CorrespondenceSet { pairs }
}
