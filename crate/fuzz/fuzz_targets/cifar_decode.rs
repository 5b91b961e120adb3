//! Binary image-record decoder: must never panic and never allocate more
//! than the input length implies, for either record layout.

#![no_main]

use dwx_core::data::{decode_cifar_records, CifarVariant};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    for variant in [CifarVariant::Cifar10, CifarVariant::Cifar100] {
        if let Ok((images, labels)) = decode_cifar_records(data, variant) {
            // whatever decodes must be internally consistent
            assert_eq!(images.shape().0, labels.len());
            assert!(labels.iter().all(|&l| l < variant.class_count()));
            assert!(images.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
});
