//! On-disk layout of a world directory: `world.json` + `datasets.bin`.
//!
//! `datasets.bin` is little-endian throughout:
//!
//! ```text
//! magic         [u8; 4] = "RMLB"
//! version       u32     = 1
//! world_seed    u64
//! dataset_seed  u64
//! sizes.train   u64
//! sizes.valid   u64
//! d_x           u32
//! d_y           u32
//! n_sections    u32     = 5
//! section × n_sections:
//!     tag       u8      0 train | 1 id | 2 prompt_ood | 3 response_ood | 4 mutual_ood
//!     kind      u8      0 triplets | 1 groups
//!     count     u64     records in the section
//!     byte_len  u64     payload length in bytes
//!     payload
//! triplet record:
//!     prompt_id u64, x [f64; d_x],
//!     chosen generator u32, chosen y [f64; d_y],
//!     rejected generator u32, rejected y [f64; d_y],
//!     gold_w f64, gold_l f64
//! group record:
//!     prompt_id u64, x [f64; d_x], n u32,
//!     n × (generator u32, y [f64; d_y], gold f64)
//! ```

use std::fs;
use std::io::{BufReader, BufWriter, Read};
use std::path::Path;

use super::{DatasetBundle, GoldWorld, PreferenceTriplet, Provenance, RankedGroup, Response, SizeConfig, WorldError};
use crate::wire::{LeReader, LeWriter};

pub const BUNDLE_MAGIC: [u8; 4] = *b"RMLB";
pub const BUNDLE_VERSION: u32 = 1;

pub const WORLD_FILE: &str = "world.json";
pub const DATASETS_FILE: &str = "datasets.bin";

pub fn save_world(dir: &Path, world: &GoldWorld) -> Result<(), WorldError> {
    fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(world).map_err(|e| WorldError::Format(e.to_string()))?;
    fs::write(dir.join(WORLD_FILE), json + "\n")?;
    Ok(())
}

pub fn load_world(dir: &Path) -> Result<GoldWorld, WorldError> {
    let text = fs::read_to_string(dir.join(WORLD_FILE))?;
    let world: GoldWorld = serde_json::from_str(&text).map_err(|e| WorldError::Format(e.to_string()))?;
    world.config.validate()?;
    Ok(world)
}

fn write_triplets(out: &mut LeWriter<&mut Vec<u8>>, set: &[PreferenceTriplet]) -> std::io::Result<()> {
    for t in set {
        out.u64(t.prompt_id)?;
        out.f64s(&t.x)?;
        out.u32(t.chosen.generator)?;
        out.f64s(&t.chosen.y)?;
        out.u32(t.rejected.generator)?;
        out.f64s(&t.rejected.y)?;
        out.f64(t.gold_w)?;
        out.f64(t.gold_l)?;
    }
    Ok(())
}

fn write_groups(out: &mut LeWriter<&mut Vec<u8>>, set: &[RankedGroup]) -> std::io::Result<()> {
    for g in set {
        out.u64(g.prompt_id)?;
        out.f64s(&g.x)?;
        out.u32(g.responses.len() as u32)?;
        for (r, s) in g.responses.iter().zip(&g.gold_scores) {
            out.u32(r.generator)?;
            out.f64s(&r.y)?;
            out.f64(*s)?;
        }
    }
    Ok(())
}

/// Serializes a bundle into the `datasets.bin` byte layout.
pub fn encode_bundle(bundle: &DatasetBundle) -> Vec<u8> {
    let d_x = bundle.d_train.first().map_or(0, |t| t.x.len());
    let d_y = bundle.d_train.first().map_or(0, |t| t.chosen.y.len());
    let mut buf = Vec::new();
    let mut w = LeWriter::new(&mut buf);
    // Writing into a Vec cannot fail.
    (|| -> std::io::Result<()> {
        w.bytes(&BUNDLE_MAGIC)?;
        w.u32(BUNDLE_VERSION)?;
        w.u64(bundle.provenance.world_seed)?;
        w.u64(bundle.provenance.dataset_seed)?;
        w.u64(bundle.provenance.sizes.train as u64)?;
        w.u64(bundle.provenance.sizes.valid as u64)?;
        w.u32(d_x as u32)?;
        w.u32(d_y as u32)?;
        w.u32(5)?;
        let triplet_sets = [(0u8, &bundle.d_train), (1, &bundle.d_id)];
        for (tag, set) in triplet_sets {
            let mut payload = Vec::new();
            write_triplets(&mut LeWriter::new(&mut payload), set)?;
            w.u8(tag)?;
            w.u8(0)?;
            w.u64(set.len() as u64)?;
            w.u64(payload.len() as u64)?;
            w.bytes(&payload)?;
        }
        let group_sets = [
            (2u8, &bundle.d_prompt_ood),
            (3, &bundle.d_response_ood),
            (4, &bundle.d_mutual_ood),
        ];
        for (tag, set) in group_sets {
            let mut payload = Vec::new();
            write_groups(&mut LeWriter::new(&mut payload), set)?;
            w.u8(tag)?;
            w.u8(1)?;
            w.u64(set.len() as u64)?;
            w.u64(payload.len() as u64)?;
            w.bytes(&payload)?;
        }
        Ok(())
    })()
    .expect("in-memory write");
    buf
}

pub fn save_bundle(dir: &Path, bundle: &DatasetBundle) -> Result<(), WorldError> {
    fs::create_dir_all(dir)?;
    let mut f = BufWriter::new(fs::File::create(dir.join(DATASETS_FILE))?);
    std::io::Write::write_all(&mut f, &encode_bundle(bundle))?;
    std::io::Write::flush(&mut f)?;
    Ok(())
}

fn bad(msg: impl Into<String>) -> WorldError {
    WorldError::Format(msg.into())
}

/// Parses the `datasets.bin` byte layout.
pub fn decode_bundle<R: Read>(input: R) -> Result<DatasetBundle, WorldError> {
    let mut r = LeReader::new(input);
    if r.array::<4>()? != BUNDLE_MAGIC {
        return Err(bad("bad magic, expected RMLB"));
    }
    let version = r.u32()?;
    if version != BUNDLE_VERSION {
        return Err(bad(format!("unsupported datasets.bin version {version}")));
    }
    let world_seed = r.u64()?;
    let dataset_seed = r.u64()?;
    let sizes = SizeConfig {
        train: r.u64()? as usize,
        valid: r.u64()? as usize,
    };
    let d_x = r.u32()? as usize;
    let d_y = r.u32()? as usize;
    let n_sections = r.u32()?;
    if n_sections != 5 {
        return Err(bad(format!("expected 5 sections, found {n_sections}")));
    }

    let mut triplets: [Vec<PreferenceTriplet>; 2] = Default::default();
    let mut groups: [Vec<RankedGroup>; 3] = Default::default();
    for expected_tag in 0u8..5 {
        let tag = r.u8()?;
        let kind = r.u8()?;
        let count = r.u64()? as usize;
        let _byte_len = r.u64()?;
        if tag != expected_tag {
            return Err(bad(format!("section {expected_tag} has tag {tag}")));
        }
        let want_kind = if tag < 2 { 0 } else { 1 };
        if kind != want_kind {
            return Err(bad(format!("section {tag} has kind {kind}")));
        }
        for _ in 0..count {
            let prompt_id = r.u64()?;
            let x = r.f64s(d_x)?;
            if kind == 0 {
                let chosen = Response {
                    generator: r.u32()?,
                    y: r.f64s(d_y)?,
                };
                let rejected = Response {
                    generator: r.u32()?,
                    y: r.f64s(d_y)?,
                };
                let gold_w = r.f64()?;
                let gold_l = r.f64()?;
                triplets[tag as usize].push(PreferenceTriplet {
                    prompt_id,
                    x,
                    chosen,
                    rejected,
                    gold_w,
                    gold_l,
                });
            } else {
                let n = r.u32()? as usize;
                let mut responses = Vec::with_capacity(n);
                let mut gold_scores = Vec::with_capacity(n);
                for _ in 0..n {
                    responses.push(Response {
                        generator: r.u32()?,
                        y: r.f64s(d_y)?,
                    });
                    gold_scores.push(r.f64()?);
                }
                groups[tag as usize - 2].push(RankedGroup {
                    prompt_id,
                    x,
                    responses,
                    gold_scores,
                });
            }
        }
    }
    if !r.at_eof()? {
        return Err(bad("trailing bytes after last section"));
    }
    let [d_train, d_id] = triplets;
    let [d_prompt_ood, d_response_ood, d_mutual_ood] = groups;
    Ok(DatasetBundle {
        d_train,
        d_id,
        d_prompt_ood,
        d_response_ood,
        d_mutual_ood,
        provenance: Provenance {
            world_seed,
            dataset_seed,
            sizes,
        },
    })
}

pub fn load_bundle(dir: &Path) -> Result<DatasetBundle, WorldError> {
    let f = fs::File::open(dir.join(DATASETS_FILE))?;
    decode_bundle(BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::goldworld::{build_datasets, generate_world, WorldConfig};

    #[test]
    fn world_and_bundle_round_trip() {
        let cfg = WorldConfig {
            n_train_prompts: 30,
            n_valid_prompts: 10,
            ..WorldConfig::default()
        };
        let world = generate_world(&cfg, 77).unwrap();
        let bundle = build_datasets(&world, SizeConfig { train: 20, valid: 6 }, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_world(dir.path(), &world).unwrap();
        save_bundle(dir.path(), &bundle).unwrap();
        assert_eq!(load_world(dir.path()).unwrap(), world);
        let back = load_bundle(dir.path()).unwrap();
        assert_eq!(back, bundle);
        assert_eq!(encode_bundle(&back), encode_bundle(&bundle));
    }

    #[test]
    fn header_layout_is_stable() {
        let cfg = WorldConfig {
            n_train_prompts: 10,
            n_valid_prompts: 4,
            ..WorldConfig::default()
        };
        let world = generate_world(&cfg, 1).unwrap();
        let bundle = build_datasets(&world, SizeConfig { train: 3, valid: 2 }, 9).unwrap();
        let bytes = encode_bundle(&bundle);
        assert_eq!(&bytes[..4], b"RMLB");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 9);
        assert_eq!(u32::from_le_bytes(bytes[40..44].try_into().unwrap()), 16);
        // first section header: tag 0, kind 0, count 3
        assert_eq!(&bytes[52..54], &[0, 0]);
        assert_eq!(u64::from_le_bytes(bytes[54..62].try_into().unwrap()), 3);
        let triplet_len = 8 + 16 * 8 + 2 * (4 + 16 * 8) + 16;
        assert_eq!(u64::from_le_bytes(bytes[62..70].try_into().unwrap()), 3 * triplet_len);
    }

    #[test]
    fn rejects_corrupt_input() {
        assert!(decode_bundle(&b"XXXX"[..]).is_err());
        let mut bytes = b"RMLB".to_vec();
        bytes.extend_from_slice(&2u32.to_le_bytes());
        assert!(matches!(decode_bundle(&bytes[..]), Err(WorldError::Format(_))));
    }
}
