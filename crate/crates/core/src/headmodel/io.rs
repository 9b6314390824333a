//! Asset files: OBJ geometry with per-corner UVs, PGM class texture, JSON
//! landmark embedding and class table, and an optional binary blendshape
//! file.
//!
//! Blendshape file layout (little-endian): magic `BLND`, `u32` vertex count,
//! `u32` shape count, `u32` expression count, then the shape basis followed
//! by the expression basis as `f64`, vertex-major with the coefficient index
//! fastest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::Vector2;

use super::{validate_landmarks, Basis, ClassTable, ClassTexture, LandmarkBinding, TemplateAsset, Topology};
use crate::imageio::{decode_pgm, encode_pgm, read_file, write_file, GrayImage};
use crate::{Error, Result, Vec3};

const BASIS_MAGIC: &[u8; 4] = b"BLND";

/// Files making up an asset on disk.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AssetPaths {
    pub mesh: PathBuf,
    pub class_texture: PathBuf,
    pub embedding: PathBuf,
    /// When absent, every ID present in the texture is named `class_<id>`.
    pub class_table: Option<PathBuf>,
    /// When absent, the asset has no blendshapes.
    pub basis: Option<PathBuf>,
}

impl AssetPaths {
    /// Conventional file names inside one directory.
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            mesh: dir.join("head.obj"),
            class_texture: dir.join("classes.pgm"),
            embedding: dir.join("landmarks.json"),
            class_table: Some(dir.join("classes.json")),
            basis: Some(dir.join("basis.bin")),
        }
    }
}

struct ObjData {
    vertices: Vec<Vec3>,
    faces: Vec<[u32; 3]>,
    uv: Vec<[Vector2<f64>; 3]>,
}

fn parse_obj(text: &str, path: &Path) -> Result<ObjData> {
    let mut vertices = Vec::new();
    let mut texcoords: Vec<Vector2<f64>> = Vec::new();
    let mut faces = Vec::new();
    let mut uv = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let err = |m: String| Error::parse(path, format!("line {line_no}"), m);
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut parts = line.split_whitespace();
        let Some(tag) = parts.next() else { continue };
        let floats = |parts: std::str::SplitWhitespace<'_>| -> Result<Vec<f64>> {
            parts
                .map(|s| s.parse::<f64>().map_err(|_| err(format!("invalid number {s:?}"))))
                .collect()
        };
        match tag {
            "v" => {
                let c = floats(parts)?;
                if c.len() < 3 {
                    return Err(err("vertex needs 3 coordinates".into()));
                }
                vertices.push(Vec3::new(c[0], c[1], c[2]));
            }
            "vt" => {
                let c = floats(parts)?;
                if c.len() < 2 {
                    return Err(err("texture coordinate needs 2 values".into()));
                }
                texcoords.push(Vector2::new(c[0], c[1]));
            }
            "f" => {
                let mut corners = Vec::new();
                for item in parts {
                    let mut idx = item.split('/');
                    let resolve = |s: Option<&str>, n: usize, what: &str| -> Result<usize> {
                        let s = s.filter(|s| !s.is_empty()).ok_or_else(|| err(format!("face corner {item:?} lacks a {what} index")))?;
                        let k: i64 = s.parse().map_err(|_| err(format!("invalid index {s:?}")))?;
                        let r = if k > 0 { k - 1 } else { n as i64 + k };
                        if k == 0 || r < 0 || r as usize >= n {
                            return Err(Error::Validation(format!(
                                "{}: line {line_no}: {what} index {k} out of range (have {n})",
                                path.display()
                            )));
                        }
                        Ok(r as usize)
                    };
                    let v = resolve(idx.next(), vertices.len(), "vertex")?;
                    let t = resolve(idx.next(), texcoords.len(), "texture")?;
                    corners.push((v, t));
                }
                if corners.len() < 3 {
                    return Err(err("face needs at least 3 corners".into()));
                }
                for k in 1..corners.len() - 1 {
                    let tri = [corners[0], corners[k], corners[k + 1]];
                    faces.push(tri.map(|(v, _)| v as u32));
                    uv.push(tri.map(|(_, t)| texcoords[t]));
                }
            }
            "vn" | "o" | "g" | "s" | "usemtl" | "mtllib" => {}
            other => return Err(err(format!("unsupported statement {other:?}"))),
        }
    }
    Ok(ObjData { vertices, faces, uv })
}

fn encode_obj(asset: &TemplateAsset) -> String {
    let mut out = String::new();
    for v in &asset.base_vertices {
        let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
    }
    for corners in &asset.topology.uv {
        for c in corners {
            let _ = writeln!(out, "vt {} {}", c.x, c.y);
        }
    }
    for (fi, f) in asset.topology.faces.iter().enumerate() {
        let t = 3 * fi + 1;
        let _ = writeln!(
            out,
            "f {}/{} {}/{} {}/{}",
            f[0] + 1,
            t,
            f[1] + 1,
            t + 1,
            f[2] + 1,
            t + 2
        );
    }
    out
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_file(path)?;
    serde_json::from_slice(&bytes).map_err(|e| {
        Error::parse(path, format!("line {} column {}", e.line(), e.column()), e.to_string())
    })
}

pub fn load_embedding(path: &Path) -> Result<Vec<LandmarkBinding>> {
    parse_json(path)
}

pub fn load_class_table(path: &Path) -> Result<ClassTable> {
    parse_json(path)
}

fn load_texture(path: &Path) -> Result<ClassTexture> {
    let img = decode_pgm(&read_file(path)?, path)?;
    Ok(ClassTexture {
        width: img.width,
        height: img.height,
        data: img.data,
    })
}

fn decode_basis(bytes: &[u8], path: &Path, vertices: usize) -> Result<(Basis, Basis)> {
    if bytes.len() < 16 || &bytes[..4] != BASIS_MAGIC {
        return Err(Error::parse(path, "byte 0", "missing BLND magic"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (v, nb, np) = (word(0), word(1), word(2));
    if v != vertices {
        return Err(Error::Dimension { what: "basis vertex count", expected: vertices, actual: v });
    }
    let expected = 16 + 8 * v * 3 * (nb + np);
    if bytes.len() != expected {
        return Err(Error::parse(
            path,
            format!("byte {}", bytes.len().min(expected)),
            format!("expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    let floats: Vec<f64> = bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let (shape, expr) = floats.split_at(v * 3 * nb);
    Ok((Basis::from_raw(v, nb, shape.to_vec())?, Basis::from_raw(v, np, expr.to_vec())?))
}

fn encode_basis(asset: &TemplateAsset) -> Vec<u8> {
    let mut out = BASIS_MAGIC.to_vec();
    for n in [asset.base_vertices.len(), asset.n_beta(), asset.n_psi()] {
        out.extend_from_slice(&(n as u32).to_le_bytes());
    }
    for x in asset.shape_basis.raw().iter().chain(asset.expr_basis.raw()) {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

/// Loads and validates an asset.
pub fn load_asset(paths: &AssetPaths) -> Result<TemplateAsset> {
    let text = String::from_utf8(read_file(&paths.mesh)?)
        .map_err(|e| Error::parse(&paths.mesh, format!("byte {}", e.utf8_error().valid_up_to()), "OBJ is not UTF-8"))?;
    let obj = parse_obj(&text, &paths.mesh)?;
    let class_texture = load_texture(&paths.class_texture)?;
    let landmarks = load_embedding(&paths.embedding)?;
    validate_landmarks(&landmarks, obj.faces.len())?;
    let class_table = match &paths.class_table {
        Some(p) => load_class_table(p)?,
        None => {
            let mut ids: Vec<u8> = class_texture.data.iter().copied().filter(|&c| c != 0).collect();
            ids.sort_unstable();
            ids.dedup();
            ClassTable(ids.into_iter().map(|id| (id, format!("class_{id}"))).collect())
        }
    };
    let (shape_basis, expr_basis) = match &paths.basis {
        Some(p) => decode_basis(&read_file(p)?, p, obj.vertices.len())?,
        None => (Basis::empty(), Basis::empty()),
    };
    let asset = TemplateAsset {
        base_vertices: obj.vertices,
        shape_basis,
        expr_basis,
        topology: Arc::new(Topology {
            faces: obj.faces,
            uv: obj.uv,
            landmarks,
            class_texture,
            class_table,
        }),
    };
    asset.validate()?;
    Ok(asset)
}

/// Writes every file named in `paths`. Optional entries that are `None`
/// are skipped.
pub fn save_asset(asset: &TemplateAsset, paths: &AssetPaths) -> Result<()> {
    asset.validate()?;
    let topo = &asset.topology;
    write_file(&paths.mesh, encode_obj(asset).as_bytes())?;
    let tex = &topo.class_texture;
    write_file(
        &paths.class_texture,
        &encode_pgm(&GrayImage { width: tex.width, height: tex.height, data: tex.data.clone() }),
    )?;
    write_file(&paths.embedding, crate::json::to_string_pretty(&topo.landmarks).as_bytes())?;
    if let Some(p) = &paths.class_table {
        write_file(p, crate::json::to_string_pretty(&topo.class_table).as_bytes())?;
    }
    if let Some(p) = &paths.basis {
        write_file(p, &encode_basis(asset))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::headmodel::builtin_head;
    use crate::headmodel::tests::triangle_asset;

    fn write_minimal(dir: &Path, obj: &str, embedding: &str) -> AssetPaths {
        let paths = AssetPaths {
            mesh: dir.join("m.obj"),
            class_texture: dir.join("t.pgm"),
            embedding: dir.join("e.json"),
            class_table: None,
            basis: None,
        };
        std::fs::write(&paths.mesh, obj).unwrap();
        std::fs::write(&paths.class_texture, encode_pgm(&GrayImage { width: 2, height: 2, data: vec![1, 1, 2, 2] })).unwrap();
        std::fs::write(&paths.embedding, embedding).unwrap();
        paths
    }

    const TRIANGLE_OBJ: &str = "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 0 1\nf 1/1 2/2 3/3\n";

    #[test]
    fn minimal_triangle_obj() {
        let dir = tempfile::tempdir().unwrap();
        let paths = write_minimal(dir.path(), TRIANGLE_OBJ, r#"[{"face":0,"bary":[1,0,0]}]"#);
        let asset = load_asset(&paths).unwrap();
        assert_eq!(asset.base_vertices.len(), 3);
        assert_eq!(asset.topology.faces.len(), 1);
        assert_eq!(asset.topology.class_table.ids().collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn embedding_face_out_of_range() {
        let dir = tempfile::tempdir().unwrap();
        let paths = write_minimal(dir.path(), TRIANGLE_OBJ, r#"[{"face":1,"bary":[1,0,0]}]"#);
        assert!(matches!(load_asset(&paths), Err(Error::Validation(_))));
    }

    #[test]
    fn malformed_obj_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let obj = "v 0 0 0\nv 1 0 zero\n";
        let paths = write_minimal(dir.path(), obj, "[]");
        match load_asset(&paths) {
            Err(Error::Parse { location, .. }) => assert_eq!(location, "line 2"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn vertex_index_out_of_range() {
        let dir = tempfile::tempdir().unwrap();
        let obj = "v 0 0 0\nv 1 0 0\nvt 0 0\nf 1/1 2/1 3/1\n";
        let paths = write_minimal(dir.path(), obj, r#"[{"face":0,"bary":[1,0,0]}]"#);
        assert!(matches!(load_asset(&paths), Err(Error::Validation(_))));
    }

    #[test]
    fn quad_is_fan_triangulated() {
        let text = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvt 0 0\nf 1/1 2/1 3/1 4/1\n";
        let obj = parse_obj(text, Path::new("q.obj")).unwrap();
        assert_eq!(obj.faces, vec![[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn save_load_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        for asset in [builtin_head(4, 3, 2), triangle_asset(Some(vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 1.0 / 3.0]))] {
            let paths = AssetPaths::in_dir(dir.path());
            save_asset(&asset, &paths).unwrap();
            let back = load_asset(&paths).unwrap();
            assert_eq!(back, asset);
        }
    }
}
