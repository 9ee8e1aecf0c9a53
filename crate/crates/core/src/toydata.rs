//! The bundled toy catalog and template set.

use crate::catalog::Catalog;
use crate::reaction::TemplateSet;
use crate::sampler::prune_unmatched;

pub const CATALOG_TSV: &str = include_str!("../data/toy_catalog.tsv");
pub const TEMPLATES_TSV: &str = include_str!("../data/toy_templates.tsv");

pub fn templates() -> TemplateSet {
    TemplateSet::parse(TEMPLATES_TSV).expect("bundled templates parse")
}

/// Toy catalog with blocks matching no template removed.
pub fn catalog() -> Catalog {
    let (cat, _) = Catalog::parse(CATALOG_TSV).expect("bundled catalog parses");
    prune_unmatched(&cat, &templates()).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::EligibilityIndex;

    #[test]
    fn bundled_data_is_clean() {
        let (cat, report) = Catalog::parse(CATALOG_TSV).unwrap();
        assert!(report.duplicates.is_empty(), "{:?}", report.duplicates);
        let t = templates();
        assert!((10..=15).contains(&t.len()));
        assert!(t.iter().any(|x| x.arity() == 1));
        assert!(t.iter().any(|x| x.arity() == 3));
        assert!(t.iter().any(|x| x.products.len() > 1));
        let idx = EligibilityIndex::build(&cat, &t);
        assert!(idx.unmatched.is_empty(), "{:?}", idx.unmatched);
        assert!(idx.empty_slots.is_empty());
        assert!(cat.len() >= 200);
    }
}
