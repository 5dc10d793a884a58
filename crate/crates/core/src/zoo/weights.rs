//! `PNW1` weight container.
//!
//! All integers are little-endian.
//!
//! ```text
//! magic        4 bytes  "PNW1"
//! fp_len       u32      fingerprint length in bytes
//! fingerprint  fp_len   UTF-8 architecture string
//! count        u32      number of tensors
//! per tensor, in layer order:
//!   name_len   u32
//!   name       name_len bytes, UTF-8 ("<layer>.<weight|bias>")
//!   rank       u32
//!   extents    rank x u64
//!   values     product(extents) x f64
//! ```

use std::fs;
use std::path::Path;

use crate::error::{format_err, Error, Result};
use crate::nn::Network;
use crate::tensor::Tensor;

use super::builders::{backbone_fingerprint, BACKBONE_PREFIX};

const MAGIC: &[u8; 4] = b"PNW1";

#[derive(Debug, Clone, PartialEq)]
pub struct WeightContainer {
    fingerprint: String,
    tensors: Vec<(String, Tensor)>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| format_err!("weight file truncated while reading {what} at byte {}", self.pos))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        String::from_utf8(self.take(len, what)?.to_vec()).map_err(|_| format_err!("{what} is not valid UTF-8"))
    }
}

impl WeightContainer {
    pub fn new(fingerprint: String, tensors: Vec<(String, Tensor)>) -> Self {
        Self { fingerprint, tensors }
    }

    /// Snapshot of every parameter of `net`.
    pub fn from_network(net: &Network) -> Self {
        Self {
            fingerprint: net.fingerprint(),
            tensors: net
                .params()
                .iter()
                .map(|p| (p.full_name(), p.value.clone()))
                .collect(),
        }
    }

    /// Snapshot of the backbone parameters only, tagged with
    /// [`backbone_fingerprint`].
    pub fn backbone_of(net: &Network) -> Self {
        Self {
            fingerprint: backbone_fingerprint(net),
            tensors: net
                .params()
                .iter()
                .filter(|p| p.name.starts_with(BACKBONE_PREFIX))
                .map(|p| (p.full_name(), p.value.clone()))
                .collect(),
        }
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn tensors(&self) -> &[(String, Tensor)] {
        &self.tensors
    }

    pub fn names(&self) -> Vec<&str> {
        self.tensors.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        let put_str = |out: &mut Vec<u8>, s: &str| {
            out.extend_from_slice(&(s.len() as u32).to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        };
        put_str(&mut out, &self.fingerprint);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            put_str(&mut out, name);
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(format_err!("not a weight file (bad magic)"));
        }
        let fingerprint = r.string("fingerprint")?;
        let count = r.u32("tensor count")? as usize;
        let mut tensors = Vec::with_capacity(count.min(1024));
        for i in 0..count {
            let name = r.string(&format!("tensor {i} name"))?;
            let rank = r.u32(&format!("rank of `{name}`"))? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                let d = r.u64(&format!("extent of `{name}`"))?;
                shape.push(usize::try_from(d).map_err(|_| format_err!("extent of `{name}` too large"))?);
            }
            let len = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .and_then(|n| n.checked_mul(8))
                .ok_or_else(|| format_err!("tensor `{name}` is too large"))?;
            let raw = r.take(len, &format!("values of `{name}`"))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(&shape, data).map_err(|e| format_err!("tensor `{name}`: {e}"))?;
            tensors.push((name, t));
        }
        if r.pos != bytes.len() {
            return Err(format_err!("{} trailing bytes after the last tensor", bytes.len() - r.pos));
        }
        Ok(Self { fingerprint, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Copies every tensor into `net`. The fingerprints must match exactly.
    pub fn apply(&self, net: &mut Network) -> Result<()> {
        let want = net.fingerprint();
        if self.fingerprint != want {
            return Err(format_err!(
                "weights were saved for a different architecture\n  file:    {}\n  network: {want}",
                self.fingerprint
            ));
        }
        net.set_params(&self.tensors)
    }

    /// Copies backbone tensors into the backbone layers of `net`.
    pub(crate) fn apply_backbone(&self, net: &mut Network) -> Result<()> {
        let want = backbone_fingerprint(net);
        if self.fingerprint != want {
            return Err(format_err!(
                "backbone weights do not match the configured backbone\n  file:    {}\n  backbone: {want}",
                self.fingerprint
            ));
        }
        let mut slots: Vec<_> = net
            .param_slots()
            .into_iter()
            .filter(|s| s.name.starts_with(BACKBONE_PREFIX))
            .collect();
        for (i, slot) in slots.iter().enumerate() {
            match self.tensors.get(i) {
                Some((name, t)) if *name == slot.name && t.shape() == slot.value.shape() => {}
                _ => return Err(format_err!("backbone tensor mismatch at `{}`", slot.name)),
            }
        }
        if self.tensors.len() != slots.len() {
            let extra = &self.tensors[slots.len()].0;
            return Err(format_err!("backbone tensor mismatch at `{extra}` (not in the network)"));
        }
        for (slot, (_, t)) in slots.iter_mut().zip(&self.tensors) {
            *slot.value = t.clone();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::zoo::{build, build_vgg_feature_extractor, ModelSpec};

    #[test]
    fn save_load_save_is_byte_identical() {
        let net = build(&ModelSpec::simple(3, &[0.3]), 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.pnw");
        let p2 = dir.path().join("b.pnw");
        WeightContainer::from_network(&net).save(&p1).unwrap();
        WeightContainer::load(&p1).unwrap().save(&p2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn round_trip_forward_is_bit_identical() {
        let spec = ModelSpec::simple(4, &[0.5, 0.5]);
        let net = build(&spec, 4).unwrap();
        let bytes = WeightContainer::from_network(&net).to_bytes();
        let mut other = build(&spec, 99).unwrap();
        WeightContainer::from_bytes(&bytes).unwrap().apply(&mut other).unwrap();
        let x = Tensor::random_uniform(&[3, 3, 64, 64], 0.0, 1.0, &mut Rng::new(0)).unwrap();
        let a: Vec<u64> = net.predict(&x).unwrap().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = other.predict(&x).unwrap().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn names_follow_layer_order() {
        let net = build(&ModelSpec::simple(3, &[]), 0).unwrap();
        // oracle: walk the layers and list parameter tensors
        let mut want = Vec::new();
        for i in 0..net.len() {
            for (suffix, _, _) in net.layer(i).params() {
                want.push(format!("{}.{suffix}", net.layer_name(i)));
            }
        }
        assert_eq!(want.len(), 10);
        assert_eq!(WeightContainer::from_network(&net).names(), want);
    }

    #[test]
    fn corruption_is_a_format_error() {
        let net = build(&ModelSpec::simple(3, &[]), 0).unwrap();
        let bytes = WeightContainer::from_network(&net).to_bytes();
        let mut bad = bytes.clone();
        bad[0] ^= 0xff;
        assert!(matches!(WeightContainer::from_bytes(&bad), Err(Error::Format(_))));
        for cut in [0, 3, 7, 50, bytes.len() - 1] {
            assert!(matches!(WeightContainer::from_bytes(&bytes[..cut]), Err(Error::Format(_))));
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(WeightContainer::from_bytes(&long), Err(Error::Format(_))));
        // huge fingerprint length
        let mut len = bytes.clone();
        len[4..8].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(WeightContainer::from_bytes(&len), Err(Error::Format(_))));
    }

    #[test]
    fn fingerprint_mismatch_is_rejected() {
        let w = WeightContainer::from_network(&build(&ModelSpec::simple(3, &[]), 0).unwrap());
        let mut other = build(&ModelSpec::simple(4, &[]), 0).unwrap();
        assert!(matches!(w.apply(&mut other), Err(Error::Format(_))));
    }

    #[test]
    fn backbone_weights_load_and_mismatch() {
        let spec = ModelSpec::vgg(&[], false);
        let donor = build(&spec, 1).unwrap();
        let bb = WeightContainer::backbone_of(&donor);
        let net = build_vgg_feature_extractor(&spec, Some(&bb), 2).unwrap();
        assert_eq!(WeightContainer::backbone_of(&net), bb);

        let mut wrong = bb.clone();
        wrong.tensors[2].0 = "backbone.conv9.weight".into();
        let err = build_vgg_feature_extractor(&spec, Some(&wrong), 2).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
        assert!(err.to_string().contains("backbone.conv1_2.weight"), "{err}");

        let other = ModelSpec { base_width: 8, ..spec.clone() };
        let err = build_vgg_feature_extractor(&other, Some(&bb), 2).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }
}
