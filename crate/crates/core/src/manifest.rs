//! CSV manifest ingestion, serialization and train/test splitting.
//!
//! The header is `id,path,<class names in registry order>`; every label
//! cell is `0` or `1`.

use std::fs::File;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::types::{ClassRegistry, LabelVector, Manifest, SampleRecord, SplitTag};

pub fn load_manifest(path: &Path, registry: &ClassRegistry) -> Result<Manifest> {
    load_manifest_as(path, registry, SplitTag::Train)
}

pub fn load_manifest_as(path: &Path, registry: &ClassRegistry, split: SplitTag) -> Result<Manifest> {
    let file = File::open(path).map_err(|source| Error::Load {
        path: path.to_owned(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header = reader.headers()?.clone();
    let expected: Vec<&str> = ["id", "path"]
        .into_iter()
        .chain(registry.names().iter().map(String::as_str))
        .collect();
    let found: Vec<&str> = header.iter().map(str::trim).collect();
    if found != expected {
        return Err(Error::Schema {
            path: path.to_owned(),
            message: format!("header {found:?} does not match expected {expected:?}"),
        });
    }

    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        let row = row?;
        if row.len() != expected.len() {
            return Err(Error::Validation {
                row: row_no,
                column: String::new(),
                message: format!("expected {} cells, found {}", expected.len(), row.len()),
            });
        }
        let mut flags = Vec::with_capacity(registry.len());
        for (c, name) in registry.names().iter().enumerate() {
            let cell = row[c + 2].trim();
            flags.push(match cell {
                "0" => false,
                "1" => true,
                other => {
                    return Err(Error::Validation {
                        row: row_no,
                        column: name.clone(),
                        message: format!("label cell {other:?} is not 0 or 1"),
                    })
                }
            });
        }
        records.push(SampleRecord {
            id: row[0].trim().to_owned(),
            image_path: row[1].trim().to_owned(),
            labels: LabelVector::new(flags),
        });
    }
    Manifest::new(registry.clone(), records, split)
}

pub fn write_manifest(manifest: &Manifest, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec!["id".to_owned(), "path".to_owned()];
    header.extend(manifest.registry.names().iter().cloned());
    writer.write_record(&header)?;
    for r in &manifest.records {
        let mut row = vec![r.id.clone(), r.image_path.clone()];
        row.extend(
            r.labels
                .flags()
                .iter()
                .map(|f| if *f { "1".to_owned() } else { "0".to_owned() }),
        );
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Resolves a record's image path against the manifest's directory.
pub fn resolve_image_path(manifest_path: &Path, record: &SampleRecord) -> PathBuf {
    let p = Path::new(&record.image_path);
    if p.is_absolute() {
        p.to_owned()
    } else {
        manifest_path.parent().unwrap_or_else(|| Path::new(".")).join(p)
    }
}

/// Ids of records whose image file does not exist.
pub fn missing_images(manifest: &Manifest, manifest_path: &Path) -> Vec<String> {
    manifest
        .records
        .iter()
        .filter(|r| !resolve_image_path(manifest_path, r).is_file())
        .map(|r| r.id.clone())
        .collect()
}

/// Random disjoint split; the first part holds `floor(n * train_fraction)`
/// records. Records keep their original relative order within each part.
pub fn split_manifest(manifest: &Manifest, train_fraction: f64, seed: u64) -> Result<(Manifest, Manifest)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::arg(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let n = manifest.len();
    let n_train = ((n as f64) * train_fraction + 1e-9).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut in_train = vec![false; n];
    for &i in &order[..n_train] {
        in_train[i] = true;
    }
    let (mut train, mut test) = (Vec::with_capacity(n_train), Vec::with_capacity(n - n_train));
    for (r, t) in manifest.records.iter().zip(&in_train) {
        if *t {
            train.push(r.clone());
        } else {
            test.push(r.clone());
        }
    }
    Ok((
        Manifest::new(manifest.registry.clone(), train, SplitTag::Train)?,
        Manifest::new(manifest.registry.clone(), test, SplitTag::Test)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;
    use std::io::Write;

    fn registry() -> ClassRegistry {
        ClassRegistry::new(["A", "B"]).unwrap()
    }

    fn write_csv(dir: &Path, body: &str) -> PathBuf {
        let path = dir.join("m.csv");
        let mut f = File::create(&path).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        path
    }

    fn manifest_of(n: usize) -> Manifest {
        let records = (0..n)
            .map(|i| SampleRecord {
                id: format!("s{i}"),
                image_path: format!("img/s{i}.png"),
                labels: LabelVector::new(vec![i % 2 == 0, i % 3 == 0]),
            })
            .collect();
        Manifest::new(registry(), records, SplitTag::Train).unwrap()
    }

    #[test]
    fn loads_three_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_csv(dir.path(), "id,path,A,B\na,a.png,1,0\nb,b.png,1,1\nc,c.png,0,1\n");
        let m = load_manifest(&p, &registry()).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.records[1].labels.flags(), &[true, true]);
    }

    #[test]
    fn missing_file_is_load_error() {
        let err = load_manifest(Path::new("/nonexistent/m.csv"), &registry()).unwrap_err();
        assert!(matches!(err, Error::Load { .. }));
    }

    #[test]
    fn bad_cell_names_row_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_csv(dir.path(), "id,path,A,B\na,a.png,1,0\nb,b.png,0,2\n");
        match load_manifest(&p, &registry()).unwrap_err() {
            Error::Validation { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "B");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn uncertain_label_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_csv(dir.path(), "id,path,A,B\na,a.png,-1,0\n");
        assert!(matches!(
            load_manifest(&p, &registry()).unwrap_err(),
            Error::Validation { .. }
        ));
    }

    #[test]
    fn header_mismatch_is_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_csv(dir.path(), "id,path,B,A\na,a.png,1,0\n");
        assert!(matches!(
            load_manifest(&p, &registry()).unwrap_err(),
            Error::Schema { .. }
        ));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_csv(dir.path(), "id,path,A,B\na,a.png,1,0\na,b.png,0,0\n");
        assert!(load_manifest(&p, &registry()).is_err());
    }

    #[test]
    fn split_sizes_and_determinism() {
        let m = manifest_of(10);
        let (a, b) = split_manifest(&m, 0.8, 7).unwrap();
        assert_eq!((a.len(), b.len()), (8, 2));
        let (a2, b2) = split_manifest(&m, 0.8, 7).unwrap();
        assert_eq!(a, a2);
        assert_eq!(b, b2);
    }

    #[test]
    fn split_rejects_boundaries() {
        let m = manifest_of(10);
        assert!(split_manifest(&m, 1.0, 7).is_err());
        assert!(split_manifest(&m, 0.0, 7).is_err());
    }

    #[test]
    fn missing_images_flagged() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.png"), b"").unwrap();
        let p = write_csv(dir.path(), "id,path,A,B\na,a.png,1,0\nb,b.png,0,0\n");
        let m = load_manifest(&p, &registry()).unwrap();
        assert_eq!(missing_images(&m, &p), vec!["b".to_owned()]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn write_then_load_round_trips(rows in prop::collection::vec((any::<bool>(), any::<bool>()), 0..30)) {
                let records = rows.iter().enumerate().map(|(i, (a, b))| SampleRecord {
                    id: format!("r{i}"),
                    image_path: format!("x/{i}.png"),
                    labels: LabelVector::new(vec![*a, *b]),
                }).collect();
                let m = Manifest::new(registry(), records, SplitTag::Train).unwrap();
                let dir = tempfile::tempdir().unwrap();
                let p = dir.path().join("m.csv");
                write_manifest(&m, &p).unwrap();
                prop_assert_eq!(load_manifest(&p, &registry()).unwrap(), m);
            }

            #[test]
            fn split_partitions(n in 1usize..60, frac in 0.05f64..0.95, seed in any::<u64>()) {
                let m = manifest_of(n);
                let (a, b) = split_manifest(&m, frac, seed).unwrap();
                let ids_a: HashSet<_> = a.records.iter().map(|r| r.id.clone()).collect();
                let ids_b: HashSet<_> = b.records.iter().map(|r| r.id.clone()).collect();
                prop_assert!(ids_a.is_disjoint(&ids_b));
                prop_assert_eq!(ids_a.len() + ids_b.len(), n);
                prop_assert_eq!(a.len(), ((n as f64) * frac + 1e-9).floor() as usize);
            }
        }
    }
}
