//! Dataset-level glue between localized layouts, conv-stage features and
//! the alignment and classification stages.

use crate::align::{self, AlignError, PartDescriptorTable, PartRow, SlotAssignment};
use crate::classify::{self, ClassifyError, FusedFeature};
use crate::localize::PartLayout;
use crate::tensor::{self, Descriptor, Tensor};

/// One image's layout together with its conv-stage features.
#[derive(Debug, Clone)]
pub struct LocalizedImage {
    pub id: String,
    pub layout: PartLayout,
    pub conv: Tensor,
}

fn region_descriptor(conv: &Tensor, mask: &tensor::Mask) -> Result<Descriptor, AlignError> {
    let (_, h, w) = conv.chw()?;
    align::part_descriptor(conv, &align::downsample_mask(mask, h, w))
}

/// Descriptor rows for every part of every image, in input order.
pub fn part_table(images: &[LocalizedImage]) -> Result<PartDescriptorTable, AlignError> {
    let mut table = PartDescriptorTable::default();
    for img in images {
        let dims = img.conv.chw()?;
        if table.rows.is_empty() {
            table.feature_dims = dims;
        }
        for (part, mask) in img.layout.masks().iter().enumerate() {
            table.rows.push(PartRow {
                image: img.id.clone(),
                part,
                descriptor: region_descriptor(&img.conv, mask)?,
            });
        }
    }
    Ok(table)
}

#[derive(Debug, thiserror::Error)]
pub enum FuseError {
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error(transparent)]
    Tensor(#[from] tensor::TensorError),
}

/// `[whole image, object box, aligned part 1 .. K]`. A group with no member
/// from this image falls back to the object descriptor.
pub fn fused_representation(
    img: &LocalizedImage,
    table: &PartDescriptorTable,
    slots: &SlotAssignment,
) -> Result<FusedFeature, FuseError> {
    let whole = tensor::global_average_pool(&img.conv)?;
    let (h, w) = img.layout.image_dims;
    let object = region_descriptor(&img.conv, &img.layout.object_box.mask(h, w))?;
    let mut blocks = vec![whole, object.clone()];
    let k = slots.group_part.len();
    let rows = slots.images.get(&img.id);
    for g in 0..k {
        let row = rows.and_then(|r| r[g]);
        blocks.push(match row {
            Some(r) => table.rows[r].descriptor.clone(),
            None => object.clone(),
        });
    }
    Ok(classify::fuse_features(&blocks)?)
}
