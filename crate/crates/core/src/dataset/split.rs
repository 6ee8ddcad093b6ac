use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DatasetSplit, Sample, Subset};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Market1501,
    Duke,
    Cuhk03,
    Cuhk01,
    Toy,
}

impl Protocol {
    fn requires_cameras(self) -> bool {
        !matches!(self, Protocol::Toy)
    }
}

/// Splits `samples` into train / query / gallery according to `protocol`.
///
/// The result is a pure function of `(samples, protocol, seed)`; only the
/// CUHK protocols consume the seed.
pub fn make_split(samples: &[Sample], protocol: Protocol, seed: u64) -> Result<DatasetSplit> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("cannot split an empty sample list".into()));
    }
    if protocol.requires_cameras() {
        if let Some(s) = samples.iter().find(|s| s.camera().is_none()) {
            return Err(Error::InvalidInput(format!(
                "{protocol:?} protocol requires camera labels; {} has none",
                s.meta.path.display()
            )));
        }
    }

    let mut split = match protocol {
        Protocol::Toy => {
            let (train, test): (Vec<_>, Vec<_>) =
                samples.iter().cloned().partition(|s| s.identity() % 2 == 0);
            let (query, gallery) = first_per_camera_as_query(test);
            DatasetSplit {
                train,
                gallery,
                query,
                num_identities_train: 0,
            }
        }
        Protocol::Market1501 | Protocol::Duke => split_by_subset_tags(samples, protocol)?,
        Protocol::Cuhk03 => split_cuhk03(samples, seed)?,
        Protocol::Cuhk01 => split_cuhk01(samples, seed)?,
    };

    let gallery_ids: BTreeSet<u32> = split.gallery.iter().map(Sample::identity).collect();
    let before = split.query.len();
    split.query.retain(|q| gallery_ids.contains(&q.identity()));
    if split.query.len() < before {
        log::warn!(
            "dropped {} queries whose identity never appears in the gallery",
            before - split.query.len()
        );
    }
    split.num_identities_train = split.train_identities().len();
    Ok(split)
}

/// The first sample (in input order) of every `(identity, camera)` becomes a
/// query, everything else goes to the gallery.
fn first_per_camera_as_query(test: Vec<Sample>) -> (Vec<Sample>, Vec<Sample>) {
    let mut seen = BTreeSet::new();
    let mut query = Vec::new();
    let mut gallery = Vec::new();
    for s in test {
        if seen.insert((s.identity(), s.camera())) {
            query.push(s);
        } else {
            gallery.push(s);
        }
    }
    (query, gallery)
}

fn split_by_subset_tags(samples: &[Sample], protocol: Protocol) -> Result<DatasetSplit> {
    let mut split = DatasetSplit::default();
    let mut untagged_test = Vec::new();
    for s in samples {
        match s.meta.subset {
            Some(Subset::Train) => split.train.push(s.clone()),
            Some(Subset::Query) => split.query.push(s.clone()),
            Some(Subset::Gallery) => split.gallery.push(s.clone()),
            Some(Subset::Test) => untagged_test.push(s.clone()),
            None => {
                return Err(Error::InvalidInput(format!(
                    "{protocol:?} protocol needs train/test tags; {} has none",
                    s.meta.path.display()
                )))
            }
        }
    }
    let (query, gallery) = first_per_camera_as_query(untagged_test);
    split.query.extend(query);
    split.gallery.extend(gallery);
    Ok(split)
}

fn by_identity(samples: &[Sample]) -> BTreeMap<u32, Vec<&Sample>> {
    let mut map: BTreeMap<u32, Vec<&Sample>> = BTreeMap::new();
    for s in samples {
        map.entry(s.identity()).or_default().push(s);
    }
    map
}

fn split_cuhk03(samples: &[Sample], seed: u64) -> Result<DatasetSplit> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups = by_identity(samples);
    let mut eligible: Vec<u32> = groups
        .iter()
        .filter(|(_, v)| v.iter().map(|s| s.camera()).collect::<BTreeSet<_>>().len() >= 2)
        .map(|(id, _)| *id)
        .collect();
    if eligible.is_empty() {
        return Err(Error::InsufficientData(
            "cuhk03 split needs identities seen by at least two cameras".into(),
        ));
    }
    eligible.shuffle(&mut rng);
    let n_test = (groups.len() / 2).clamp(1, 100).min(eligible.len());
    let test_ids: BTreeSet<u32> = eligible[..n_test].iter().copied().collect();

    let mut split = DatasetSplit::default();
    for (id, members) in &groups {
        if !test_ids.contains(id) {
            split.train.extend(members.iter().map(|s| (*s).clone()));
            continue;
        }
        let first_cam = members.iter().filter_map(|s| s.camera()).min();
        let probes: Vec<&&Sample> = members.iter().filter(|s| s.camera() == first_cam).collect();
        let pick = rng.random_range(0..probes.len());
        split.query.push((*probes[pick]).clone());
        split.gallery.extend(
            members
                .iter()
                .filter(|s| s.camera() != first_cam)
                .map(|s| (*s).clone()),
        );
    }
    Ok(split)
}

fn split_cuhk01(samples: &[Sample], seed: u64) -> Result<DatasetSplit> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups = by_identity(samples);
    let mut ids: Vec<u32> = groups.keys().copied().collect();
    ids.shuffle(&mut rng);
    let n_test = (ids.len() / 2).max(1);
    let test_ids: BTreeSet<u32> = ids[..n_test].iter().copied().collect();
    let probe_camera = samples.iter().filter_map(|s| s.camera()).min();

    let mut split = DatasetSplit::default();
    for s in samples {
        if !test_ids.contains(&s.identity()) {
            split.train.push(s.clone());
        } else if s.camera() == probe_camera {
            split.query.push(s.clone());
        } else {
            split.gallery.push(s.clone());
        }
    }
    Ok(split)
}
