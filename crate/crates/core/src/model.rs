//! Multi-domain slicing model: domains, their shareable resources, the
//! interdomain communication slices joining them and the sliced virtual
//! networks built on top.
//!
//! Validation never fails; it reports every broken invariant as data so a
//! caller can show all problems at once.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("nothing to slice: domain `{0}` has no resources")]
    NothingToSlice(String),
    #[error("malformed model document: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResourceKind {
    InfrastructureService,
    Communication,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resource {
    pub id: String,
    pub kind: ResourceKind,
    /// Performance-constraint class of the traffic this resource generates.
    pub constraint_class: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Domain {
    pub id: String,
    /// Opaque site label.
    pub location: String,
    #[serde(default)]
    pub resources: Vec<Resource>,
}

/// Bandwidth (packets/s), loss fraction and delay (s) of a communication slice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceParams {
    pub bandwidth: f64,
    pub loss: f64,
    pub delay: f64,
}

impl SliceParams {
    /// Names of the fields that break their range constraints.
    pub fn invalid_fields(&self) -> Vec<&'static str> {
        let mut bad = Vec::new();
        if !(self.bandwidth >= 0.0) || !self.bandwidth.is_finite() {
            bad.push("bandwidth");
        }
        if !(0.0..=1.0).contains(&self.loss) {
            bad.push("loss");
        }
        if !(self.delay >= 0.0) || !self.delay.is_finite() {
            bad.push("delay");
        }
        bad
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommunicationSlice {
    /// Unordered pair of domain ids.
    pub endpoints: [String; 2],
    pub params: SliceParams,
}

impl CommunicationSlice {
    fn pair(&self) -> (String, String) {
        let [a, b] = &self.endpoints;
        if a <= b {
            (a.clone(), b.clone())
        } else {
            (b.clone(), a.clone())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlicedVirtualNetwork {
    pub id: String,
    pub members: Vec<String>,
}

/// Whole model document as exchanged in JSON.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SliceModel {
    #[serde(default)]
    pub domains: Vec<Domain>,
    #[serde(default)]
    pub communication_slices: Vec<CommunicationSlice>,
    #[serde(default)]
    pub svns: Vec<SlicedVirtualNetwork>,
}

impl SliceModel {
    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        serde_json::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn validate(&self) -> ValidationReport {
        validate_model(&self.domains, &self.communication_slices, &self.svns)
    }

    pub fn domain(&self, id: &str) -> Option<&Domain> {
        self.domains.iter().find(|d| d.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Violation {
    DuplicateDomainId {
        domain: String,
    },
    /// A resource id listed more than once, within or across domains.
    DuplicateResource {
        resource: String,
    },
    SelfLoopSlice {
        domain: String,
    },
    UnknownSliceEndpoint {
        domain: String,
    },
    DuplicateInterdomainLink {
        a: String,
        b: String,
    },
    InvalidSliceParams {
        a: String,
        b: String,
        field: String,
    },
    DuplicateSvnId {
        svn: String,
    },
    UnresolvedMember {
        svn: String,
        member: String,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateDomainId { domain } => write!(f, "duplicate domain id `{domain}`"),
            Violation::DuplicateResource { resource } => {
                write!(f, "resource `{resource}` appears in more than one place")
            }
            Violation::SelfLoopSlice { domain } => {
                write!(f, "communication slice joins domain `{domain}` to itself")
            }
            Violation::UnknownSliceEndpoint { domain } => {
                write!(f, "communication slice endpoint `{domain}` is not a known domain")
            }
            Violation::DuplicateInterdomainLink { a, b } => {
                write!(f, "duplicate interdomain link ({a}, {b})")
            }
            Violation::InvalidSliceParams { a, b, field } => {
                write!(f, "communication slice ({a}, {b}) has out-of-range `{field}`")
            }
            Violation::DuplicateSvnId { svn } => write!(f, "duplicate svn id `{svn}`"),
            Violation::UnresolvedMember { svn, member } => {
                write!(f, "unresolved member `{member}` in svn `{svn}`")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    /// Sorted and free of duplicates, so input order never matters.
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate_model(
    domains: &[Domain],
    slices: &[CommunicationSlice],
    svns: &[SlicedVirtualNetwork],
) -> ValidationReport {
    let mut found = BTreeSet::new();

    let mut domain_ids = BTreeMap::new();
    let mut resource_seen = BTreeMap::new();
    for d in domains {
        *domain_ids.entry(d.id.as_str()).or_insert(0usize) += 1;
        for r in &d.resources {
            *resource_seen.entry(r.id.as_str()).or_insert(0usize) += 1;
        }
    }
    for (id, n) in &domain_ids {
        if *n > 1 {
            found.insert(Violation::DuplicateDomainId { domain: id.to_string() });
        }
    }
    for (id, n) in &resource_seen {
        if *n > 1 {
            found.insert(Violation::DuplicateResource { resource: id.to_string() });
        }
    }

    let mut links = BTreeMap::new();
    for s in slices {
        let (a, b) = s.pair();
        for end in [&a, &b] {
            if !domain_ids.contains_key(end.as_str()) {
                found.insert(Violation::UnknownSliceEndpoint { domain: end.clone() });
            }
        }
        if a == b {
            found.insert(Violation::SelfLoopSlice { domain: a.clone() });
        }
        for field in s.params.invalid_fields() {
            found.insert(Violation::InvalidSliceParams { a: a.clone(), b: b.clone(), field: field.to_string() });
        }
        *links.entry((a, b)).or_insert(0usize) += 1;
    }
    for ((a, b), n) in links {
        if n > 1 {
            found.insert(Violation::DuplicateInterdomainLink { a, b });
        }
    }

    let mut svn_ids = BTreeMap::new();
    for svn in svns {
        *svn_ids.entry(svn.id.as_str()).or_insert(0usize) += 1;
        for m in &svn.members {
            if !resource_seen.contains_key(m.as_str()) {
                found.insert(Violation::UnresolvedMember { svn: svn.id.clone(), member: m.clone() });
            }
        }
    }
    for (id, n) in svn_ids {
        if n > 1 {
            found.insert(Violation::DuplicateSvnId { svn: id.to_string() });
        }
    }

    ValidationReport { violations: found.into_iter().collect() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub constraint_class: u32,
    pub queue: usize,
}

/// Mapping from constraint class to gateway queue, ordered by class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewayPlan {
    pub entries: Vec<PlanEntry>,
}

impl GatewayPlan {
    pub fn queue_count(&self) -> usize {
        self.entries.len()
    }

    pub fn queue_for_class(&self, class: u32) -> Option<usize> {
        self.entries.iter().find(|e| e.constraint_class == class).map(|e| e.queue)
    }
}

/// One gateway queue per distinct constraint class, indexed in ascending
/// class order.
pub fn build_gateway_plan(domain: &Domain) -> Result<GatewayPlan, ModelError> {
    if domain.resources.is_empty() {
        return Err(ModelError::NothingToSlice(domain.id.clone()));
    }
    let classes: BTreeSet<u32> = domain.resources.iter().map(|r| r.constraint_class).collect();
    let entries = classes
        .into_iter()
        .enumerate()
        .map(|(queue, constraint_class)| PlanEntry { constraint_class, queue })
        .collect();
    Ok(GatewayPlan { entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn res(id: &str, class: u32) -> Resource {
        Resource { id: id.into(), kind: ResourceKind::Communication, constraint_class: class }
    }

    fn domain(id: &str, resources: Vec<Resource>) -> Domain {
        Domain { id: id.into(), location: format!("site-{id}"), resources }
    }

    fn link(a: &str, b: &str) -> CommunicationSlice {
        CommunicationSlice {
            endpoints: [a.into(), b.into()],
            params: SliceParams { bandwidth: 100.0, loss: 0.01, delay: 0.02 },
        }
    }

    #[test]
    fn empty_model_is_valid() {
        assert!(validate_model(&[], &[], &[]).is_valid());
    }

    #[test]
    fn duplicate_link_is_reported_once_regardless_of_endpoint_order() {
        let domains = vec![domain("D1", vec![res("r1", 0)]), domain("D2", vec![res("r2", 0)])];
        let report = validate_model(&domains, &[link("D1", "D2"), link("D2", "D1")], &[]);
        assert_eq!(report.violations, vec![Violation::DuplicateInterdomainLink { a: "D1".into(), b: "D2".into() }]);
        assert!(report.violations[0].to_string().contains("duplicate interdomain link"));
    }

    #[test]
    fn dangling_svn_member() {
        let domains = vec![domain("D1", vec![res("r1", 0)])];
        let svns = vec![SlicedVirtualNetwork { id: "S1".into(), members: vec!["r1".into(), "r9".into()] }];
        let report = validate_model(&domains, &[], &svns);
        assert_eq!(report.violations, vec![Violation::UnresolvedMember { svn: "S1".into(), member: "r9".into() }]);
        assert!(report.violations[0].to_string().contains("unresolved member"));
    }

    #[test]
    fn resource_shared_by_two_domains() {
        let domains = vec![domain("D1", vec![res("r1", 0)]), domain("D2", vec![res("r1", 1)])];
        let report = validate_model(&domains, &[], &[]);
        assert_eq!(report.violations, vec![Violation::DuplicateResource { resource: "r1".into() }]);
    }

    #[test]
    fn slice_shape_problems() {
        let domains = vec![domain("D1", vec![])];
        let mut bad = link("D1", "D1");
        bad.params.loss = 1.5;
        let report = validate_model(&domains, &[bad, link("D1", "D3")], &[]);
        assert!(report.violations.contains(&Violation::SelfLoopSlice { domain: "D1".into() }));
        assert!(report.violations.contains(&Violation::UnknownSliceEndpoint { domain: "D3".into() }));
        assert!(report.violations.contains(&Violation::InvalidSliceParams {
            a: "D1".into(),
            b: "D1".into(),
            field: "loss".into()
        }));
    }

    #[test]
    fn plan_three_classes() {
        let d = domain("D1", vec![res("a", 0), res("b", 0), res("c", 1), res("d", 2), res("e", 2)]);
        let plan = build_gateway_plan(&d).unwrap();
        assert_eq!(plan.queue_count(), 3);
        let classes: Vec<u32> = plan.entries.iter().map(|e| e.constraint_class).collect();
        assert_eq!(classes, vec![0, 1, 2]);
    }

    #[test]
    fn plan_singleton_and_ordering() {
        let plan = build_gateway_plan(&domain("D", vec![res("x", 7)])).unwrap();
        assert_eq!(plan.entries, vec![PlanEntry { constraint_class: 7, queue: 0 }]);

        let plan = build_gateway_plan(&domain("D", vec![res("a", 2), res("b", 0), res("c", 1)])).unwrap();
        assert_eq!(plan.queue_for_class(0), Some(0));
        assert_eq!(plan.queue_for_class(1), Some(1));
        assert_eq!(plan.queue_for_class(2), Some(2));
    }

    #[test]
    fn plan_rejects_empty_domain() {
        assert_eq!(build_gateway_plan(&domain("D9", vec![])), Err(ModelError::NothingToSlice("D9".into())));
    }

    #[test]
    fn json_field_names() {
        let model =
            SliceModel { domains: vec![domain("D1", vec![res("r1", 0)])], communication_slices: vec![], svns: vec![] };
        let v: serde_json::Value = serde_json::from_str(&model.to_json()).unwrap();
        for key in ["domains", "communication_slices", "svns"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["domains"][0]["resources"][0]["constraint_class"], 0);
        assert_eq!(v["domains"][0]["resources"][0]["kind"], "communication");
    }

    fn arb_model() -> impl Strategy<Value = SliceModel> {
        let domains =
            prop::collection::vec((0u8..4, prop::collection::vec((0u8..8, 0u32..4), 0..4)), 0..5).prop_map(|ds| {
                ds.into_iter()
                    .map(|(id, rs)| Domain {
                        id: format!("D{id}"),
                        location: "x".into(),
                        resources: rs
                            .into_iter()
                            .map(|(r, c)| Resource {
                                id: format!("r{r}"),
                                kind: if c % 2 == 0 {
                                    ResourceKind::Communication
                                } else {
                                    ResourceKind::InfrastructureService
                                },
                                constraint_class: c,
                            })
                            .collect(),
                    })
                    .collect::<Vec<_>>()
            });
        let slices = prop::collection::vec((0u8..4, 0u8..4), 0..5)
            .prop_map(|ps| ps.into_iter().map(|(a, b)| link(&format!("D{a}"), &format!("D{b}"))).collect::<Vec<_>>());
        let svns = prop::collection::vec((0u8..3, prop::collection::vec(0u8..10, 0..4)), 0..3).prop_map(|ss| {
            ss.into_iter()
                .map(|(id, ms)| SlicedVirtualNetwork {
                    id: format!("S{id}"),
                    members: ms.into_iter().map(|m| format!("r{m}")).collect(),
                })
                .collect::<Vec<_>>()
        });
        (domains, slices, svns).prop_map(|(domains, communication_slices, svns)| SliceModel {
            domains,
            communication_slices,
            svns,
        })
    }

    proptest! {
        #[test]
        fn validation_ignores_input_order(model in arb_model(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let first = model.validate();
            prop_assert_eq!(&first, &model.validate());
            let mut shuffled = model.clone();
            shuffled.domains.shuffle(&mut rng);
            shuffled.communication_slices.shuffle(&mut rng);
            shuffled.svns.shuffle(&mut rng);
            prop_assert_eq!(first, shuffled.validate());
        }

        #[test]
        fn valid_models_keep_one_link_per_pair_after_json(model in arb_model()) {
            let back = SliceModel::from_json(&model.to_json()).unwrap();
            prop_assert_eq!(&back, &model);
            if back.validate().is_valid() {
                let mut pairs = BTreeSet::new();
                for s in &back.communication_slices {
                    prop_assert!(pairs.insert(s.pair()));
                }
            }
        }

        #[test]
        fn plan_length_is_distinct_class_count(classes in prop::collection::vec(0u32..20, 1..30)) {
            let d = domain("D", classes.iter().enumerate().map(|(i, c)| res(&format!("r{i}"), *c)).collect());
            let plan = build_gateway_plan(&d).unwrap();
            let distinct: BTreeSet<_> = classes.iter().collect();
            prop_assert_eq!(plan.queue_count(), distinct.len());
            prop_assert!(plan.entries.windows(2).all(|w| w[0].constraint_class < w[1].constraint_class));
        }
    }
}
