//! Render scene description (JSON) and its resolved form.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use psample_core::geom::{Frame, Vec3};
use psample_core::material::PureSampleMaterial;
use psample_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraDesc {
    pub origin: [f64; 3],
    pub look_at: [f64; 3],
    pub up: [f64; 3],
    pub fov_deg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageDesc {
    pub width: usize,
    pub height: usize,
    pub spp: usize,
}

/// Affine uv mapping `offset + scale * (a, b)` of the quad parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UvMap {
    #[serde(default = "unit_scale")]
    pub scale: [f64; 2],
    #[serde(default)]
    pub offset: [f64; 2],
}

fn unit_scale() -> [f64; 2] {
    [1.0, 1.0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadDesc {
    pub corner: [f64; 3],
    pub edge_u: [f64; 3],
    pub edge_v: [f64; 3],
    pub material: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uv: Option<UvMap>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointLightDesc {
    pub position: [f64; 3],
    pub intensity: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentDesc {
    pub radiance: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MaterialDesc {
    Lambertian { albedo: [f64; 3] },
    /// A learned material file; relative paths resolve against the scene file.
    Neural { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub camera: CameraDesc,
    pub image: ImageDesc,
    pub materials: BTreeMap<String, MaterialDesc>,
    pub quads: Vec<QuadDesc>,
    #[serde(default)]
    pub point_lights: Vec<PointLightDesc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub environment: Option<EnvironmentDesc>,
}

#[derive(Clone, Debug)]
pub enum Material {
    Lambertian { albedo: [f64; 3] },
    Neural(Arc<PureSampleMaterial>),
}

#[derive(Clone, Copy, Debug)]
pub struct Camera {
    pub origin: Vec3,
    /// Image-plane vectors at unit distance: pixel (x, y) looks along
    /// `forward + (2 sx - 1) right + (1 - 2 sy) up` with `s` in [0, 1].
    pub forward: Vec3,
    pub right: Vec3,
    pub up: Vec3,
}

#[derive(Clone, Copy, Debug)]
pub struct Quad {
    pub corner: Vec3,
    pub edge_u: Vec3,
    pub edge_v: Vec3,
    pub frame: Frame,
    pub material: usize,
    pub uv: Option<UvMap>,
}

#[derive(Clone, Copy, Debug)]
pub struct PointLight {
    pub position: Vec3,
    pub intensity: [f64; 3],
}

#[derive(Clone, Debug)]
pub struct RenderScene {
    pub camera: Camera,
    pub width: usize,
    pub height: usize,
    pub spp: usize,
    pub materials: Vec<Material>,
    pub quads: Vec<Quad>,
    pub point_lights: Vec<PointLight>,
    pub environment: Option<[f64; 3]>,
}

fn v3(a: [f64; 3]) -> Vec3 {
    Vec3::from_array(a)
}

fn finite(path: &str, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Schema { path: path.into(), msg: "values must be finite".into() })
    }
}

fn non_negative(path: &str, v: &[f64; 3]) -> Result<()> {
    finite(path, v)?;
    if v.iter().all(|x| *x >= 0.0) {
        Ok(())
    } else {
        Err(Error::Schema { path: path.into(), msg: "values must be non-negative".into() })
    }
}

impl RenderScene {
    /// Resolves a scene. `base` is the directory relative material paths are
    /// read from; `override_model` replaces every neural material's file.
    pub fn from_file(desc: &SceneFile, base: &Path, override_model: Option<&Path>) -> Result<Self> {
        let schema = |path: &str, msg: String| Error::Schema { path: path.into(), msg };
        let img = &desc.image;
        if img.width == 0 || img.height == 0 || img.spp == 0 {
            return Err(schema("image", "width, height and spp must be at least 1".into()));
        }
        let cam = &desc.camera;
        finite("camera", &[cam.origin, cam.look_at, cam.up].concat())?;
        if !(cam.fov_deg > 0.0 && cam.fov_deg < 180.0) {
            return Err(schema("camera.fov_deg", format!("{} is outside (0, 180)", cam.fov_deg)));
        }
        let forward = v3(cam.look_at) - v3(cam.origin);
        let right = forward.cross(v3(cam.up));
        if forward.length() == 0.0 || right.length() < 1e-12 * forward.length() * v3(cam.up).length() {
            return Err(schema("camera", "look_at must differ from origin and not be parallel to up".into()));
        }
        let forward = forward.normalize();
        let right = right.normalize();
        let up = right.cross(forward);
        let half = (cam.fov_deg.to_radians() * 0.5).tan();
        let aspect = img.width as f64 / img.height as f64;
        let camera = Camera { origin: v3(cam.origin), forward, right: right * (half * aspect), up: up * half };

        let mut index = BTreeMap::new();
        let mut materials = Vec::new();
        let mut loaded: BTreeMap<PathBuf, Arc<PureSampleMaterial>> = BTreeMap::new();
        for (name, m) in &desc.materials {
            let mat = match m {
                MaterialDesc::Lambertian { albedo } => {
                    non_negative(&format!("materials.{name}.albedo"), albedo)?;
                    if albedo.iter().any(|a| *a > 1.0) {
                        return Err(schema(&format!("materials.{name}.albedo"), "components must lie in [0, 1]".into()));
                    }
                    Material::Lambertian { albedo: *albedo }
                }
                MaterialDesc::Neural { path } => {
                    let p = match override_model {
                        Some(o) => o.to_path_buf(),
                        None if path.is_absolute() => path.clone(),
                        None => base.join(path),
                    };
                    let m = match loaded.get(&p) {
                        Some(m) => m.clone(),
                        None => {
                            let m = Arc::new(PureSampleMaterial::load(&p)?);
                            loaded.insert(p, m.clone());
                            m
                        }
                    };
                    Material::Neural(m)
                }
            };
            index.insert(name.clone(), materials.len());
            materials.push(mat);
        }

        let mut quads = Vec::new();
        for (i, q) in desc.quads.iter().enumerate() {
            let path = format!("quads[{i}]");
            finite(&path, &[q.corner, q.edge_u, q.edge_v].concat())?;
            let (eu, ev) = (v3(q.edge_u), v3(q.edge_v));
            let n = eu.cross(ev);
            if n.length() <= 1e-12 * eu.length() * ev.length() || n.length() == 0.0 {
                return Err(schema(&path, "edges are degenerate".into()));
            }
            let material = *index
                .get(&q.material)
                .ok_or_else(|| schema(&format!("{path}.material"), format!("unknown material {:?}", q.material)))?;
            if let Some(uv) = &q.uv {
                finite(&format!("{path}.uv"), &[uv.scale, uv.offset].concat())?;
            }
            quads.push(Quad {
                corner: v3(q.corner),
                edge_u: eu,
                edge_v: ev,
                frame: Frame::from_tangent_normal(eu, n.normalize()),
                material,
                uv: q.uv,
            });
        }
        let mut point_lights = Vec::new();
        for (i, l) in desc.point_lights.iter().enumerate() {
            finite(&format!("point_lights[{i}].position"), &l.position)?;
            non_negative(&format!("point_lights[{i}].intensity"), &l.intensity)?;
            point_lights.push(PointLight { position: v3(l.position), intensity: l.intensity });
        }
        if let Some(e) = &desc.environment {
            non_negative("environment.radiance", &e.radiance)?;
        }
        Ok(RenderScene {
            camera,
            width: img.width,
            height: img.height,
            spp: img.spp,
            materials,
            quads,
            point_lights,
            environment: desc.environment.as_ref().map(|e| e.radiance),
        })
    }

    /// Parses and resolves a scene file.
    pub fn load(path: impl AsRef<Path>, override_model: Option<&Path>) -> Result<Self> {
        let path = path.as_ref();
        let desc: SceneFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_file(&desc, base, override_model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn quad_scene_json() -> String {
        r#"{
            "camera": {"origin": [0, 0, 3], "look_at": [0, 0, 0], "up": [0, 1, 0], "fov_deg": 40},
            "image": {"width": 8, "height": 4, "spp": 2},
            "materials": {"white": {"kind": "lambertian", "albedo": [0.8, 0.5, 0.2]}},
            "quads": [{"corner": [-1, -1, 0], "edge_u": [2, 0, 0], "edge_v": [0, 2, 0], "material": "white"}],
            "point_lights": [{"position": [0, 0, 2], "intensity": [1, 1, 1]}]
        }"#
        .into()
    }

    #[test]
    fn parses_and_resolves() {
        let desc: SceneFile = serde_json::from_str(&quad_scene_json()).unwrap();
        let s = RenderScene::from_file(&desc, Path::new("."), None).unwrap();
        assert_eq!((s.width, s.height, s.spp), (8, 4, 2));
        assert_eq!(s.quads[0].frame.n, Vec3::Z);
        assert!(s.environment.is_none());
        // Aspect 2: the horizontal half-extent is twice the vertical one.
        assert!((s.camera.right.length() / s.camera.up.length() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_scenes() {
        let base: serde_json::Value = serde_json::from_str(&quad_scene_json()).unwrap();
        let cases = [
            ("/image/spp", serde_json::json!(0)),
            ("/quads/0/edge_v", serde_json::json!([4, 0, 0])),
            ("/quads/0/material", serde_json::json!("missing")),
            ("/camera/fov_deg", serde_json::json!(180)),
            ("/materials/white/albedo", serde_json::json!([1.5, 0, 0])),
        ];
        for (ptr, val) in cases {
            let mut v = base.clone();
            *v.pointer_mut(ptr).unwrap() = val;
            let desc: SceneFile = serde_json::from_value(v).unwrap();
            assert!(matches!(RenderScene::from_file(&desc, Path::new("."), None), Err(Error::Schema { .. })), "{ptr}");
        }
        let mut v = base.clone();
        v["materials"]["white"] = serde_json::json!({"kind": "neural", "path": "/nonexistent/m.psm"});
        let desc: SceneFile = serde_json::from_value(v).unwrap();
        assert!(matches!(RenderScene::from_file(&desc, Path::new("."), None), Err(Error::Io(_))));
        let mut v = base;
        v["extra"] = serde_json::json!(1);
        assert!(serde_json::from_value::<SceneFile>(v).is_err());
    }
}
