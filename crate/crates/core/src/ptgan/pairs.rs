use std::collections::BTreeMap;

use rand::Rng;

use crate::dataset::{PoseVector, Sample};
use crate::error::{Error, Result};

/// One training example: render `source`'s person in `target`'s pose.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairIndex {
    pub source: usize,
    pub target: usize,
    /// Class index of the shared identity.
    pub label: usize,
}

/// Draws same-identity ordered pairs of distinct posed images: first an
/// identity uniformly among those with at least two posed images, then an
/// ordered pair uniformly within it.
#[derive(Clone, Debug)]
pub struct PairSampler {
    groups: Vec<(usize, Vec<usize>)>,
}

impl PairSampler {
    /// `classes` maps identities to class indices; identities missing from it
    /// are skipped.
    pub fn new(samples: &[Sample], classes: &BTreeMap<u32, usize>) -> Result<Self> {
        let mut by_id: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        let mut unposed = 0;
        for (i, s) in samples.iter().enumerate() {
            if !s.has_pose() {
                unposed += 1;
            } else if classes.contains_key(&s.identity()) {
                by_id.entry(s.identity()).or_default().push(i);
            }
        }
        if unposed > 0 {
            log::warn!("{unposed} of {} images have no detected pose and are left out of GAN pairs", samples.len());
        }
        let groups: Vec<(usize, Vec<usize>)> = by_id
            .into_iter()
            .filter(|(_, v)| v.len() >= 2)
            .map(|(id, v)| (classes[&id], v))
            .collect();
        if groups.is_empty() {
            return Err(Error::InsufficientData(
                "no identity has two or more posed images".into(),
            ));
        }
        Ok(Self { groups })
    }

    pub fn num_identities(&self) -> usize {
        self.groups.len()
    }

    pub fn num_images(&self) -> usize {
        self.groups.iter().map(|(_, v)| v.len()).sum()
    }

    pub fn sample(&self, rng: &mut impl Rng) -> PairIndex {
        let (label, members) = &self.groups[rng.random_range(0..self.groups.len())];
        let a = rng.random_range(0..members.len());
        let mut b = rng.random_range(0..members.len() - 1);
        if b >= a {
            b += 1;
        }
        PairIndex {
            source: members[a],
            target: members[b],
            label: *label,
        }
    }

    pub fn target_pose<'a>(&self, samples: &'a [Sample], pair: &PairIndex) -> &'a PoseVector {
        samples[pair.target].pose().expect("sampler only admits posed samples")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Joint, PoseSource, SampleMeta};
    use crate::image::Image;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn posed(identity: u32, idx: usize, pose: bool) -> Sample {
        Sample {
            image: Image::filled(4, 2, [0.0; 3]),
            meta: SampleMeta {
                path: format!("{identity}_{idx}.png").into(),
                identity,
                camera: None,
                pose: pose.then(|| {
                    let mut p = PoseVector::missing(PoseSource::Detected);
                    p.joints[0] = Joint::present(0.5, 0.5);
                    p
                }),
                subset: None,
            },
        }
    }

    fn classes(samples: &[Sample]) -> BTreeMap<u32, usize> {
        crate::ptgan::class_index(samples)
    }

    #[test]
    fn two_image_identity_yields_both_orders() {
        let samples = vec![posed(1, 0, true), posed(1, 1, true)];
        let sampler = PairSampler::new(&samples, &classes(&samples)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..50 {
            let p = sampler.sample(&mut rng);
            seen.insert((p.source, p.target));
        }
        assert_eq!(seen, [(0, 1), (1, 0)].into_iter().collect());
    }

    #[test]
    fn pairs_share_identity_and_differ() {
        let mut samples = Vec::new();
        for id in 0..4 {
            for i in 0..(2 + id as usize) {
                samples.push(posed(id, i, true));
            }
        }
        samples.push(posed(9, 0, true));
        samples.push(posed(9, 1, false));
        let sampler = PairSampler::new(&samples, &classes(&samples)).unwrap();
        assert_eq!(sampler.num_identities(), 4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let p = sampler.sample(&mut rng);
            assert_ne!(p.source, p.target);
            assert_eq!(samples[p.source].identity(), samples[p.target].identity());
        }
    }

    #[test]
    fn no_eligible_identity_is_an_error() {
        let samples = vec![posed(1, 0, true), posed(2, 0, true), posed(2, 1, false)];
        assert!(PairSampler::new(&samples, &classes(&samples)).is_err());
    }
}
