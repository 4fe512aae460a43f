//! On-disk datasets: `meta.txt` (the generating spec), `images.tvt` (train
//! then test images stacked as `[n, c, h, w]`) and `labels.txt`.

use std::fs;
use std::path::Path;

use super::{Dataset, LayoutDataset, LayoutDatasetSpec};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::tensor::{read_tensor_file, write_tensor_file, Tensor};

pub fn write_dataset(ds: &LayoutDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = dir.join("meta.txt");
    fs::write(&meta, ds.spec.to_key_values()?.to_string()).map_err(|e| Error::io(&meta, e))?;
    let all: Vec<&Tensor> = ds.train.images.iter().chain(&ds.test.images).collect();
    let first = all.first().ok_or_else(|| Error::Empty("dataset has no images".into()))?;
    let mut dims = vec![all.len()];
    dims.extend_from_slice(first.dims());
    let data: Vec<f64> = all.iter().flat_map(|t| t.data().iter().copied()).collect();
    write_tensor_file(&Tensor::new(dims, data)?, dir.join("images.tvt"))?;
    let labels: String = ds
        .train
        .labels
        .iter()
        .chain(&ds.test.labels)
        .map(|l| format!("{l}\n"))
        .collect();
    let path = dir.join("labels.txt");
    fs::write(&path, labels).map_err(|e| Error::io(&path, e))
}

pub fn read_dataset(dir: &Path) -> Result<LayoutDataset> {
    let spec = LayoutDatasetSpec::from_config(&Config::read(dir.join("meta.txt"))?, "")?;
    let images = read_tensor_file(dir.join("images.tvt"))?.into_f64();
    let path = dir.join("labels.txt");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let labels = text
        .lines()
        .enumerate()
        .map(|(i, l)| {
            l.trim().parse::<usize>().ok().filter(|&v| v < spec.classes).ok_or_else(|| Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                message: format!("bad label `{l}`"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = spec.train + spec.test;
    let want = [n, spec.channels, spec.height, spec.width];
    if images.dims() != want || labels.len() != n {
        return Err(Error::Format(format!(
            "{}: images {:?} and {} labels do not match meta ({want:?})",
            dir.display(),
            images.dims(),
            labels.len()
        )));
    }
    let m = spec.channels * spec.height * spec.width;
    let mut all: Vec<Tensor> = images
        .data()
        .chunks(m)
        .map(|c| Tensor::new(vec![spec.channels, spec.height, spec.width], c.to_vec()))
        .collect::<Result<_>>()?;
    let test_images = all.split_off(spec.train);
    let mut train_labels = labels;
    let test_labels = train_labels.split_off(spec.train);
    Ok(LayoutDataset {
        spec,
        train: Dataset {
            images: all,
            labels: train_labels,
        },
        test: Dataset {
            images: test_images,
            labels: test_labels,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_layout_dataset;

    #[test]
    fn round_trip() {
        let spec = LayoutDatasetSpec {
            train: 12,
            test: 5,
            ..LayoutDatasetSpec::default()
        };
        let ds = gen_layout_dataset(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        assert_eq!(read_dataset(dir.path()).unwrap(), ds);
        fs::write(dir.path().join("labels.txt"), "0\n1\n").unwrap();
        assert!(read_dataset(dir.path()).is_err());
    }
}
