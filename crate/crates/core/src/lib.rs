pub mod attack_confidentiality;
pub mod attack_integrity;
pub mod cost_model;
pub mod experiments;
pub mod ff;
pub mod linalg;
pub mod oracle;
pub mod permutation;
pub mod victim_soter;
pub mod victim_tlg;
