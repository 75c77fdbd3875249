//! On-disk branch sets and merged kernels: GSDT weight files plus a
//! plain-text `key = value` manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{parse_triple, ConvBranch, MergedKernel};
use crate::error::{Error, Result};
use crate::tensor::gsdt;
use crate::tensor::{BatchNormParams, Real};

pub const BRANCH_MANIFEST: &str = "branches.manifest";
pub const MERGED_MANIFEST: &str = "merged.manifest";

fn parse_manifest(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Format(format!("manifest line {}: expected key = value", n + 1))
        })?;
        if map
            .insert(k.trim().to_string(), v.trim().to_string())
            .is_some()
        {
            return Err(Error::Format(format!(
                "manifest line {}: duplicate key",
                n + 1
            )));
        }
    }
    Ok(map)
}

fn get<'a>(map: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str> {
    map.get(key)
        .map(String::as_str)
        .ok_or_else(|| Error::Format(format!("manifest missing `{key}`")))
}

fn join<T: Real>(v: &[T]) -> String {
    v.iter()
        .map(|x| format!("{:?}", x.as_f64()))
        .collect::<Vec<_>>()
        .join(",")
}

fn split<T: Real>(s: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map(T::from_f64)
                .map_err(|e| Error::Format(format!("bad number `{p}`: {e}")))
        })
        .collect()
}

fn triple(s: &str) -> Result<[usize; 3]> {
    parse_triple(s, ',').ok_or_else(|| Error::Format(format!("expected three integers, got `{s}`")))
}

pub fn save_branches<T: Real>(dir: impl AsRef<Path>, branches: &[ConvBranch<T>]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut text = format!("count = {}\n", branches.len());
    for (i, b) in branches.iter().enumerate() {
        let file = format!("branch{i}.gsdt");
        gsdt::save(&b.weight, dir.join(&file))?;
        let d = b.dilation;
        let _ = writeln!(text, "branch.{i}.weight = {file}");
        let _ = writeln!(text, "branch.{i}.dilation = {},{},{}", d[0], d[1], d[2]);
        let _ = writeln!(text, "branch.{i}.bn.mean = {}", join(&b.bn.mean));
        let _ = writeln!(text, "branch.{i}.bn.std = {}", join(&b.bn.std));
        let _ = writeln!(text, "branch.{i}.bn.gamma = {}", join(&b.bn.gamma));
        let _ = writeln!(text, "branch.{i}.bn.beta = {}", join(&b.bn.beta));
    }
    fs::write(dir.join(BRANCH_MANIFEST), text)?;
    Ok(())
}

pub fn load_branches<T: Real>(dir: impl AsRef<Path>) -> Result<Vec<ConvBranch<T>>> {
    let dir = dir.as_ref();
    let map = parse_manifest(&fs::read_to_string(dir.join(BRANCH_MANIFEST))?)?;
    let count: usize = get(&map, "count")?
        .parse()
        .map_err(|e| Error::Format(format!("bad count: {e}")))?;
    (0..count)
        .map(|i| {
            let key = |k: &str| format!("branch.{i}.{k}");
            let weight = gsdt::load(dir.join(get(&map, &key("weight"))?))?.into_real()?;
            let bn = BatchNormParams::new(
                split(get(&map, &key("bn.mean"))?)?,
                split(get(&map, &key("bn.std"))?)?,
                split(get(&map, &key("bn.gamma"))?)?,
                split(get(&map, &key("bn.beta"))?)?,
            )?;
            ConvBranch::new(weight, triple(get(&map, &key("dilation"))?)?, bn)
        })
        .collect()
}

pub fn save_merged<T: Real>(dir: impl AsRef<Path>, merged: &MergedKernel<T>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    gsdt::save(&merged.weight, dir.join("merged_weight.gsdt"))?;
    gsdt::save(&merged.bias, dir.join("merged_bias.gsdt"))?;
    let k = merged.extents();
    let text = format!(
        "kernel = {},{},{}\nweight = merged_weight.gsdt\nbias = merged_bias.gsdt\n",
        k[0], k[1], k[2]
    );
    fs::write(dir.join(MERGED_MANIFEST), text)?;
    Ok(())
}

pub fn load_merged<T: Real>(dir: impl AsRef<Path>) -> Result<MergedKernel<T>> {
    let dir = dir.as_ref();
    let map = parse_manifest(&fs::read_to_string(dir.join(MERGED_MANIFEST))?)?;
    let weight = gsdt::load(dir.join(get(&map, "weight")?))?.into_real::<T>()?;
    let bias = gsdt::load(dir.join(get(&map, "bias")?))?.into_real::<T>()?;
    let merged = MergedKernel { weight, bias };
    if weight_extents_ok(&merged, triple(get(&map, "kernel")?)?) {
        Ok(merged)
    } else {
        Err(Error::Format(
            "merged kernel extents disagree with manifest".into(),
        ))
    }
}

fn weight_extents_ok<T: Real>(m: &MergedKernel<T>, kernel: [usize; 3]) -> bool {
    m.weight.rank() == 5 && m.extents() == kernel && m.bias.shape() == [m.weight.shape()[0]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reparam::{default_layout, merge_branches, seeded_branches};

    #[test]
    fn branch_set_survives_disk() {
        let dir = tempfile::tempdir().unwrap();
        let branches = seeded_branches::<f32>(2, 3, &default_layout([7, 7, 1]), 5);
        save_branches(dir.path(), &branches).unwrap();
        let back: Vec<ConvBranch<f32>> = load_branches(dir.path()).unwrap();
        assert_eq!(back, branches);

        let merged = merge_branches(&branches, [7, 7, 1]).unwrap();
        save_merged(dir.path(), &merged).unwrap();
        assert_eq!(load_merged::<f32>(dir.path()).unwrap(), merged);
    }

    #[test]
    fn manifest_errors() {
        assert!(parse_manifest("a = 1\na = 2").is_err());
        assert!(parse_manifest("novalue").is_err());
        assert_eq!(parse_manifest("# c\n\n x = y \n").unwrap()["x"], "y");
    }
}
