//! The SMW tensor container.
//!
//! ```text
//! SMOEW1\n
//! ARCH <block_size> <s0,s1,...> <layout tag>\n      (optional)
//! <name> <rank> <dim0> <dim1> ...\n                  (one per tensor)
//! \n
//! <little-endian f32 payload, row-major, tensors in header order>
//! ```

use std::io::Write;
use std::path::Path;

use crate::error::{Result, SmoeError};

pub const SMW_MAGIC: &str = "SMOEW1";
const ARCH_KEYWORD: &str = "ARCH";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let name = name.into();
        let numel: usize = dims.iter().product();
        if numel != data.len() {
            return Err(SmoeError::ShapeMismatch {
                name,
                expected: dims,
                found: vec![data.len()],
            });
        }
        Ok(Self { name, dims, data })
    }

    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }
}

/// The reserved `ARCH` header line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchLine {
    pub block_size: usize,
    pub strides: Vec<usize>,
    pub layout: String,
}

impl ArchLine {
    fn render(&self) -> String {
        let strides: Vec<String> = self.strides.iter().map(usize::to_string).collect();
        format!(
            "{ARCH_KEYWORD} {} {} {}",
            self.block_size,
            strides.join(","),
            self.layout
        )
    }

    fn parse(tokens: &[&str], line: usize) -> Result<Self> {
        let bad = |reason: String| SmoeError::MalformedHeader { line, reason };
        if tokens.len() != 4 {
            return Err(bad(format!(
                "ARCH needs block size, stride schedule and layout tag, got {} fields",
                tokens.len() - 1
            )));
        }
        let block_size = tokens[1]
            .parse()
            .map_err(|_| bad(format!("bad block size {:?}", tokens[1])))?;
        let strides = tokens[2]
            .split(',')
            .map(|s| s.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| bad(format!("bad stride schedule {:?}", tokens[2])))?;
        Ok(Self {
            block_size,
            strides,
            layout: tokens[3].to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SmwFile {
    pub arch: Option<ArchLine>,
    pub tensors: Vec<Tensor>,
}

impl SmwFile {
    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut lines = Vec::new();
        loop {
            let Some(nl) = bytes[pos..].iter().position(|&b| b == b'\n') else {
                if lines.is_empty() {
                    return Err(SmoeError::BadMagic {
                        expected: SMW_MAGIC,
                        found: String::from_utf8_lossy(&bytes[..bytes.len().min(16)]).into_owned(),
                    });
                }
                return Err(SmoeError::MalformedHeader {
                    line: lines.len() + 1,
                    reason: "header is not terminated by a blank line".into(),
                });
            };
            let line = &bytes[pos..pos + nl];
            pos += nl + 1;
            if lines.is_empty() && line != SMW_MAGIC.as_bytes() {
                return Err(SmoeError::BadMagic {
                    expected: SMW_MAGIC,
                    found: String::from_utf8_lossy(&line[..line.len().min(16)]).into_owned(),
                });
            }
            if line.is_empty() {
                break;
            }
            let text = std::str::from_utf8(line).map_err(|_| SmoeError::MalformedHeader {
                line: lines.len() + 1,
                reason: "header line is not valid UTF-8".into(),
            })?;
            lines.push(text);
        }

        let mut arch = None;
        let mut headers: Vec<(String, Vec<usize>)> = Vec::new();
        for (i, text) in lines.iter().enumerate().skip(1) {
            let line = i + 1;
            let tokens: Vec<&str> = text.split_ascii_whitespace().collect();
            let bad = |reason: String| SmoeError::MalformedHeader { line, reason };
            if tokens.first() == Some(&ARCH_KEYWORD) {
                if arch.is_some() || !headers.is_empty() {
                    return Err(bad("ARCH must appear once, before any tensor".into()));
                }
                arch = Some(ArchLine::parse(&tokens, line)?);
                continue;
            }
            if tokens.len() < 2 {
                return Err(bad(format!("expected \"<name> <rank> <dims...>\", got {text:?}")));
            }
            let rank: usize = tokens[1]
                .parse()
                .map_err(|_| bad(format!("bad rank {:?}", tokens[1])))?;
            if rank == 0 || tokens.len() != 2 + rank {
                return Err(bad(format!(
                    "tensor {} declares rank {rank} but lists {} dims",
                    tokens[0],
                    tokens.len() - 2
                )));
            }
            let dims = tokens[2..]
                .iter()
                .map(|d| d.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| bad(format!("bad dims in {text:?}")))?;
            if headers.iter().any(|(n, _)| n == tokens[0]) {
                return Err(bad(format!("duplicate tensor {}", tokens[0])));
            }
            headers.push((tokens[0].to_string(), dims));
        }

        let expected: usize = headers
            .iter()
            .map(|(_, d)| d.iter().product::<usize>() * 4)
            .sum();
        let payload = &bytes[pos..];
        if payload.len() < expected {
            return Err(SmoeError::Truncated {
                expected,
                actual: payload.len(),
            });
        }
        if payload.len() > expected {
            return Err(SmoeError::TrailingBytes(payload.len() - expected));
        }

        let mut offset = 0;
        let tensors = headers
            .into_iter()
            .map(|(name, dims)| {
                let n: usize = dims.iter().product();
                let data = payload[offset..offset + 4 * n]
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect();
                offset += 4 * n;
                Tensor { name, dims, data }
            })
            .collect();
        Ok(Self { arch, tensors })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = String::from(SMW_MAGIC);
        header.push('\n');
        if let Some(arch) = &self.arch {
            header.push_str(&arch.render());
            header.push('\n');
        }
        for t in &self.tensors {
            header.push_str(&t.name);
            header.push(' ');
            header.push_str(&t.dims.len().to_string());
            for d in &t.dims {
                header.push(' ');
                header.push_str(&d.to_string());
            }
            header.push('\n');
        }
        header.push('\n');
        let payload: usize = self.tensors.iter().map(|t| t.data.len() * 4).sum();
        let mut out = Vec::with_capacity(header.len() + payload);
        out.extend_from_slice(header.as_bytes());
        for t in &self.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| SmoeError::io(path, e))?;
        Self::parse(&bytes)
    }

    /// Writes via a temporary sibling file and a rename.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("smw.tmp");
        let mut f = std::fs::File::create(&tmp).map_err(|e| SmoeError::io(&tmp, e))?;
        f.write_all(&self.to_bytes())
            .and_then(|_| f.sync_all())
            .map_err(|e| SmoeError::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| SmoeError::io(path, e))
    }
}
