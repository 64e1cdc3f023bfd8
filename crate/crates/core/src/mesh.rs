//! Layered rectangular fingertip cross-section.
//!
//! The domain spans `x ∈ [-W/2, W/2]` and `y ∈ [-depth, 0]` with the skin
//! surface at `y = 0`. Rows are aligned with layer interfaces so every
//! element sits inside exactly one layer. Element size starts at the surface
//! size near the indenter centerline and grows geometrically with depth and
//! with lateral distance, capped at `surface size × coarsening`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::afferent::{AfferentType, PerAfferent};
use crate::error::{Error, Result};

/// Linear-elastic material of one tissue layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialLayer {
    pub name: String,
    /// Young's modulus in MPa.
    pub elastic_modulus_mpa: f64,
    pub poisson_ratio: f64,
}

impl MaterialLayer {
    pub fn new(name: &str, elastic_modulus_mpa: f64, poisson_ratio: f64) -> Self {
        MaterialLayer {
            name: name.to_string(),
            elastic_modulus_mpa,
            poisson_ratio,
        }
    }

    /// All six materials of the fingertip model, including bone and nail.
    pub fn fingertip_table() -> Vec<MaterialLayer> {
        vec![
            MaterialLayer::new("Stratum corneum", 2.0, 0.30),
            MaterialLayer::new("Epidermis", 2.0, 0.30),
            MaterialLayer::new("Dermis", 0.050, 0.48),
            MaterialLayer::new("Subcutaneous tissue", 0.024, 0.40),
            MaterialLayer::new("Bone", 1.7e4, 0.30),
            MaterialLayer::new("Nail", 1.7e2, 0.30),
        ]
    }

    /// The four soft-tissue layers stacked from the surface down. Bone enters
    /// the model as the fixed bottom boundary and the nail is omitted.
    pub fn soft_tissue_layers() -> Vec<MaterialLayer> {
        Self::fingertip_table().into_iter().take(4).collect()
    }

    pub fn validate(&self, field: &str) -> Result<()> {
        if !(self.elastic_modulus_mpa.is_finite() && self.elastic_modulus_mpa > 0.0) {
            return Err(Error::validation(
                format!("{field}.elastic_modulus_mpa"),
                "must be finite and > 0",
            ));
        }
        if !(self.poisson_ratio >= 0.0 && self.poisson_ratio < 0.5) {
            return Err(Error::validation(
                format!("{field}.poisson_ratio"),
                "must lie in [0, 0.5)",
            ));
        }
        Ok(())
    }
}

/// Mesh generator input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometrySpec {
    pub domain_width_mm: f64,
    /// Thickness of each material layer, surface first. Must have one entry
    /// per material passed to [`build_mesh`].
    pub layer_thickness_mm: Vec<f64>,
    pub surface_element_mm: f64,
    /// Largest element edge as a multiple of the surface element size.
    pub coarsening: f64,
    /// Geometric growth ratio of element size with depth and lateral distance.
    pub growth_ratio: f64,
    /// Half-width of the uniformly fine band around the centerline.
    pub fine_half_width_mm: f64,
    /// Depth below the surface of each afferent sampling point.
    pub afferent_depth_mm: PerAfferent<f64>,
}

impl Default for GeometrySpec {
    fn default() -> Self {
        GeometrySpec {
            domain_width_mm: 20.0,
            layer_thickness_mm: vec![0.2, 0.5, 1.5, 5.8],
            surface_element_mm: 0.1,
            coarsening: 8.0,
            growth_ratio: 1.15,
            fine_half_width_mm: 1.5,
            afferent_depth_mm: PerAfferent::new(0.75, 0.75, 3.0),
        }
    }
}

impl GeometrySpec {
    pub fn total_depth_mm(&self) -> f64 {
        self.layer_thickness_mm.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.domain_width_mm) {
            return Err(Error::validation(
                "domain_width_mm",
                "must be finite and > 0",
            ));
        }
        if !positive(self.surface_element_mm) {
            return Err(Error::validation(
                "surface_element_mm",
                "must be finite and > 0",
            ));
        }
        if !(self.coarsening.is_finite() && self.coarsening >= 1.0) {
            return Err(Error::validation("coarsening", "must be finite and >= 1"));
        }
        if !(self.growth_ratio.is_finite() && self.growth_ratio >= 1.0) {
            return Err(Error::validation("growth_ratio", "must be finite and >= 1"));
        }
        if !(self.fine_half_width_mm.is_finite()
            && self.fine_half_width_mm >= 0.0
            && self.fine_half_width_mm < self.domain_width_mm / 2.0)
        {
            return Err(Error::validation(
                "fine_half_width_mm",
                "must lie in [0, domain_width_mm / 2)",
            ));
        }
        if self.surface_element_mm > self.domain_width_mm / 2.0 {
            return Err(Error::validation(
                "surface_element_mm",
                "must not exceed half the domain width",
            ));
        }
        if self.layer_thickness_mm.is_empty() {
            return Err(Error::validation(
                "layer_thickness_mm",
                "at least one layer is required",
            ));
        }
        for (i, &t) in self.layer_thickness_mm.iter().enumerate() {
            if !positive(t) {
                return Err(Error::validation(
                    format!("layer_thickness_mm[{i}]"),
                    "must be finite and > 0",
                ));
            }
            if self.surface_element_mm > t {
                return Err(Error::validation(
                    format!("layer_thickness_mm[{i}]"),
                    format!(
                        "layer thinner than the surface element size {}",
                        self.surface_element_mm
                    ),
                ));
            }
        }
        for (afferent, &depth) in self.afferent_depth_mm.iter() {
            if !(depth.is_finite() && depth >= 0.0) {
                return Err(Error::validation(
                    format!("afferent_depth_mm.{afferent}"),
                    "must be finite and >= 0",
                ));
            }
        }
        Ok(())
    }

    /// Row depths from the surface (0) to the bottom, with the layer index of
    /// each row band.
    fn row_depths(&self) -> (Vec<f64>, Vec<usize>) {
        let s = self.surface_element_mm;
        let s_max = s * self.coarsening;
        let mut depths = vec![0.0];
        let mut band_layer = Vec::new();
        let mut prev = s;
        let mut top = 0.0;
        for (layer, &t) in self.layer_thickness_mm.iter().enumerate() {
            let bottom = top + t;
            let target = (s + (self.growth_ratio - 1.0) * top).min(s_max).max(prev);
            let mut n = ((t / target).floor() as usize).max(1);
            if t / n as f64 > s_max * (1.0 + 1e-12) {
                n = (t / s_max).ceil() as usize;
            }
            for k in 1..=n {
                let d = if k == n {
                    bottom
                } else {
                    top + t * k as f64 / n as f64
                };
                depths.push(d);
                band_layer.push(layer);
            }
            prev = t / n as f64;
            top = bottom;
        }
        (depths, band_layer)
    }

    /// Column positions on `[0, W/2]`, centerline first.
    fn half_columns(&self) -> Vec<f64> {
        let s = self.surface_element_mm;
        let s_max = s * self.coarsening;
        let half = self.domain_width_mm / 2.0;
        let n_fine = (self.fine_half_width_mm / s).round() as usize;
        let fine_end = n_fine as f64 * s;
        let outer = half - fine_end;
        if outer < s * (1.0 - 1e-9) {
            let n = ((half / s).floor() as usize).max(1);
            return (0..=n)
                .map(|k| {
                    if k == n {
                        half
                    } else {
                        half * k as f64 / n as f64
                    }
                })
                .collect();
        }

        let nominal = |i: usize| (s * self.growth_ratio.powi(i as i32)).min(s_max);
        let mut sizes = Vec::new();
        let mut sum = 0.0;
        while sum < outer {
            let h = nominal(sizes.len() + 1);
            sizes.push(h);
            sum += h;
        }
        let fits = |sizes: &[f64], scale: f64| {
            sizes
                .iter()
                .all(|&h| h * scale >= s * (1.0 - 1e-9) && h * scale <= s_max * (1.0 + 1e-9))
        };
        let scale_long = outer / sum;
        let short = &sizes[..sizes.len() - 1];
        let short_sum: f64 = short.iter().sum();
        let use_short = !short.is_empty() && {
            let scale_short = outer / short_sum;
            let long_ok = fits(&sizes, scale_long);
            let short_ok = fits(short, scale_short);
            (short_ok && !long_ok)
                || (short_ok && long_ok && (scale_short - 1.0).abs() < (1.0 - scale_long).abs())
        };
        let (sizes, scale) = if use_short {
            (short.to_vec(), outer / short_sum)
        } else {
            (sizes, scale_long)
        };

        let mut cols: Vec<f64> = (0..=n_fine).map(|k| k as f64 * s).collect();
        let mut x = fine_end;
        for (i, h) in sizes.iter().enumerate() {
            x += h * scale;
            cols.push(if i + 1 == sizes.len() { half } else { x });
        }
        cols
    }
}

/// Structured quadrilateral mesh of the skin cross-section.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    /// Node coordinates `(x, y)` in mm.
    pub nodes: Vec<[f64; 2]>,
    /// Counterclockwise 4-node connectivity.
    pub elements: Vec<[usize; 4]>,
    /// Index into `materials` for every element.
    pub element_material: Vec<usize>,
    pub materials: Vec<MaterialLayer>,
    /// Top-boundary node ids ordered by increasing x.
    pub surface_nodes: Vec<usize>,
    /// Bottom-boundary node ids ordered by increasing x.
    pub bottom_nodes: Vec<usize>,
    pub afferent_nodes: PerAfferent<usize>,
}

/// Builds the graded layered mesh; afferent nodes are located on the
/// centerline `x = 0`.
pub fn build_mesh(spec: &GeometrySpec, materials: &[MaterialLayer]) -> Result<Mesh> {
    spec.validate()?;
    if materials.len() != spec.layer_thickness_mm.len() {
        return Err(Error::validation(
            "materials",
            format!(
                "{} materials for {} layers",
                materials.len(),
                spec.layer_thickness_mm.len()
            ),
        ));
    }
    for (i, m) in materials.iter().enumerate() {
        m.validate(&format!("materials[{i}]"))?;
    }

    let (depths, band_layer) = spec.row_depths();
    let half = spec.half_columns();
    let xs: Vec<f64> = half
        .iter()
        .rev()
        .map(|&x| if x == 0.0 { 0.0 } else { -x })
        .chain(half.iter().skip(1).copied())
        .collect();

    let ncols = xs.len();
    let nrows = depths.len();
    let mut nodes = Vec::with_capacity(ncols * nrows);
    for &d in &depths {
        for &x in &xs {
            // `-0.0` would leak into the exported text.
            nodes.push([x, if d == 0.0 { 0.0 } else { -d }]);
        }
    }

    let mut elements = Vec::with_capacity((ncols - 1) * (nrows - 1));
    let mut element_material = Vec::with_capacity(elements.capacity());
    for r in 0..nrows - 1 {
        for c in 0..ncols - 1 {
            let top = r * ncols + c;
            let bottom = (r + 1) * ncols + c;
            elements.push([bottom, bottom + 1, top + 1, top]);
            element_material.push(band_layer[r]);
        }
    }

    let mut mesh = Mesh {
        nodes,
        elements,
        element_material,
        materials: materials.to_vec(),
        surface_nodes: (0..ncols).collect(),
        bottom_nodes: ((nrows - 1) * ncols..nrows * ncols).collect(),
        afferent_nodes: PerAfferent::new(0, 0, 0),
    };
    mesh.check_jacobians()?;
    mesh.afferent_nodes = locate_afferent_nodes(&mesh, &spec.afferent_depth_mm, 0.0);
    Ok(mesh)
}

/// For each afferent, the node closest to `(center_x, -depth)`; ties go to
/// the lowest node id.
pub fn locate_afferent_nodes(
    mesh: &Mesh,
    depths: &PerAfferent<f64>,
    center_x: f64,
) -> PerAfferent<usize> {
    let surface_y = mesh.surface_y();
    depths.map(|_, &depth| nearest_node(mesh, [center_x, surface_y - depth]))
}

pub(crate) fn nearest_node(mesh: &Mesh, target: [f64; 2]) -> usize {
    let mut best = 0;
    let mut best_d2 = f64::INFINITY;
    for (id, p) in mesh.nodes.iter().enumerate() {
        let d2 = (p[0] - target[0]).powi(2) + (p[1] - target[1]).powi(2);
        if d2 < best_d2 {
            best = id;
            best_d2 = d2;
        }
    }
    best
}

/// Jacobian determinants of a bilinear quad at the 2×2 Gauss points, in
/// corner order.
pub fn gauss_jacobians(coords: &[[f64; 2]; 4]) -> [f64; 4] {
    let g = 1.0 / 3f64.sqrt();
    let points = [(-g, -g), (g, -g), (g, g), (-g, g)];
    points.map(|(xi, eta)| {
        let dn_dxi = [-(1.0 - eta), 1.0 - eta, 1.0 + eta, -(1.0 + eta)].map(|v| v / 4.0);
        let dn_deta = [-(1.0 - xi), -(1.0 + xi), 1.0 + xi, 1.0 - xi].map(|v| v / 4.0);
        let mut j = [[0.0; 2]; 2];
        for a in 0..4 {
            j[0][0] += dn_dxi[a] * coords[a][0];
            j[0][1] += dn_dxi[a] * coords[a][1];
            j[1][0] += dn_deta[a] * coords[a][0];
            j[1][1] += dn_deta[a] * coords[a][1];
        }
        j[0][0] * j[1][1] - j[0][1] * j[1][0]
    })
}

impl Mesh {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn element_count(&self) -> usize {
        self.elements.len()
    }

    pub fn dof_count(&self) -> usize {
        2 * self.nodes.len()
    }

    pub fn surface_y(&self) -> f64 {
        self.surface_nodes
            .first()
            .map(|&n| self.nodes[n][1])
            .unwrap_or(0.0)
    }

    pub fn element_coords(&self, element: usize) -> [[f64; 2]; 4] {
        self.elements[element].map(|n| self.nodes[n])
    }

    pub fn element_centroid(&self, element: usize) -> [f64; 2] {
        let c = self.element_coords(element);
        [
            c.iter().map(|p| p[0]).sum::<f64>() / 4.0,
            c.iter().map(|p| p[1]).sum::<f64>() / 4.0,
        ]
    }

    pub fn check_jacobians(&self) -> Result<()> {
        for e in 0..self.elements.len() {
            let dets = gauss_jacobians(&self.element_coords(e));
            if let Some(&det) = dets.iter().find(|d| !(**d > 0.0)) {
                return Err(Error::InvertedElement { element: e, det });
            }
        }
        Ok(())
    }

    /// Plain-text export, ordered by id.
    pub fn to_text(&self) -> String {
        let mut out = String::from("afferentsim-mesh v1\n");
        for (i, m) in self.materials.iter().enumerate() {
            let _ = writeln!(
                out,
                "M {i} {} {} {}",
                m.elastic_modulus_mpa, m.poisson_ratio, m.name
            );
        }
        for (i, p) in self.nodes.iter().enumerate() {
            let _ = writeln!(out, "N {i} {} {}", p[0], p[1]);
        }
        for (i, e) in self.elements.iter().enumerate() {
            let _ = writeln!(
                out,
                "E {i} {} {} {} {} {}",
                e[0], e[1], e[2], e[3], self.element_material[i]
            );
        }
        for (a, &n) in self.afferent_nodes.iter() {
            let _ = writeln!(out, "A {a} {n}");
        }
        out
    }

    /// Parses [`Mesh::to_text`] output. Lines starting with `#` are ignored.
    /// Surface and bottom nodes are recovered as the nodes at the extreme y.
    pub fn from_text(text: &str) -> Result<Mesh> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, header)) if header.trim() == "afferentsim-mesh v1" => {}
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    reason: "expected header `afferentsim-mesh v1`".into(),
                })
            }
        }

        let mut materials = BTreeMap::new();
        let mut nodes = BTreeMap::new();
        let mut elements = BTreeMap::new();
        let mut afferents: BTreeMap<AfferentType, usize> = BTreeMap::new();
        for (idx, raw) in lines {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |reason: &str| Error::Parse {
                line: line_no,
                reason: reason.to_string(),
            };
            let mut fields = line.split_whitespace();
            let tag = fields.next().unwrap_or_default();
            let num = |s: Option<&str>| -> Result<f64> {
                s.ok_or_else(|| err("missing field"))?
                    .parse::<f64>()
                    .map_err(|_| err("bad number"))
            };
            let id = |s: Option<&str>| -> Result<usize> {
                s.ok_or_else(|| err("missing field"))?
                    .parse::<usize>()
                    .map_err(|_| err("bad id"))
            };
            match tag {
                "M" => {
                    let i = id(fields.next())?;
                    let e = num(fields.next())?;
                    let nu = num(fields.next())?;
                    let name = fields.collect::<Vec<_>>().join(" ");
                    materials.insert(i, MaterialLayer::new(&name, e, nu));
                }
                "N" => {
                    let i = id(fields.next())?;
                    let x = num(fields.next())?;
                    let y = num(fields.next())?;
                    nodes.insert(i, [x, y]);
                }
                "E" => {
                    let i = id(fields.next())?;
                    let conn = [
                        id(fields.next())?,
                        id(fields.next())?,
                        id(fields.next())?,
                        id(fields.next())?,
                    ];
                    let mat = id(fields.next())?;
                    elements.insert(i, (conn, mat));
                }
                "A" => {
                    let a: AfferentType = fields
                        .next()
                        .ok_or_else(|| err("missing afferent type"))?
                        .parse()
                        .map_err(|_| err("bad afferent type"))?;
                    afferents.insert(a, id(fields.next())?);
                }
                _ => return Err(err("unknown record type")),
            }
        }

        let dense = |keys: Vec<usize>, what: &str| -> Result<()> {
            if keys.iter().enumerate().any(|(i, &k)| i != k) {
                return Err(Error::Parse {
                    line: 0,
                    reason: format!("{what} ids are not contiguous from 0"),
                });
            }
            Ok(())
        };
        dense(materials.keys().copied().collect(), "material")?;
        dense(nodes.keys().copied().collect(), "node")?;
        dense(elements.keys().copied().collect(), "element")?;

        let nodes: Vec<[f64; 2]> = nodes.into_values().collect();
        let materials: Vec<MaterialLayer> = materials.into_values().collect();
        let (elements, element_material): (Vec<[usize; 4]>, Vec<usize>) =
            elements.into_values().unzip();
        for (e, conn) in elements.iter().enumerate() {
            let mut sorted = *conn;
            sorted.sort_unstable();
            if sorted.windows(2).any(|w| w[0] == w[1]) || sorted[3] >= nodes.len() {
                return Err(Error::Parse {
                    line: 0,
                    reason: format!("element {e} must reference 4 distinct existing nodes"),
                });
            }
            if element_material[e] >= materials.len() {
                return Err(Error::Parse {
                    line: 0,
                    reason: format!("element {e} references unknown material"),
                });
            }
        }
        let afferent = |a: AfferentType| -> Result<usize> {
            match afferents.get(&a) {
                Some(&n) if n < nodes.len() => Ok(n),
                _ => Err(Error::Parse {
                    line: 0,
                    reason: format!("missing or invalid afferent node for {a}"),
                }),
            }
        };
        let afferent_nodes = PerAfferent::new(
            afferent(AfferentType::SA)?,
            afferent(AfferentType::RA)?,
            afferent(AfferentType::PC)?,
        );

        let boundary = |pick_max: bool| -> Vec<usize> {
            let y_ext = nodes.iter().map(|p| p[1]).fold(
                if pick_max {
                    f64::NEG_INFINITY
                } else {
                    f64::INFINITY
                },
                |a, b| {
                    if pick_max {
                        a.max(b)
                    } else {
                        a.min(b)
                    }
                },
            );
            let mut ids: Vec<usize> = (0..nodes.len()).filter(|&i| nodes[i][1] == y_ext).collect();
            ids.sort_by(|&a, &b| nodes[a][0].total_cmp(&nodes[b][0]).then(a.cmp(&b)));
            ids
        };
        let mesh = Mesh {
            surface_nodes: boundary(true),
            bottom_nodes: boundary(false),
            nodes,
            elements,
            element_material,
            materials,
            afferent_nodes,
        };
        mesh.check_jacobians()?;
        Ok(mesh)
    }
}
