"""Reference count fixtures.

``FIRE_UAV_TRAIN`` holds the per-class training image and instance counts of
the fire/smoke/human/lake UAV benchmark (40,384 images, 146,949 boxes).
:func:`coco_from_counts` turns such counts into a COCO document whose
per-class image and instance counts match exactly.
"""
from __future__ import annotations

FIRE_UAV_TRAIN = {
    "total_images": 40_384,
    # name: (images containing the class, instances)
    "classes": {
        "Fire": (16_915, 33_773),
        "Smoke": (28_769, 32_538),
        "Human": (18_525, 67_992),
        "Lake": (12_646, 12_646),
    },
    # published instance percentages
    "percentages": {"Fire": 23.0, "Smoke": 22.1, "Human": 46.3, "Lake": 8.6},
    "total_instances": 146_949,
}

FIRE_UAV_VAL = {
    "total_images": 11_953,
    "classes": {
        "Fire": (1_436, 2_336),
        "Smoke": (6_735, 7_090),
        "Human": (4_804, 16_612),
        "Lake": (1_087, 1_426),
    },
    "percentages": {"Fire": 8.5, "Smoke": 25.8, "Human": 60.5, "Lake": 5.2},
    "total_instances": 27_464,
}


def coco_from_counts(counts: dict, with_bbox: bool = True) -> dict:
    """COCO document realizing per-class (image count, instance count) pairs.

    Class c covers a contiguous, wrapping run of image slots starting where the
    previous class ended, so runs overlap into multi-class images once the
    per-class image counts sum past the total. Each covered image gets
    ``instances // images`` boxes, the first ``instances % images`` one extra.
    """
    n = counts["total_images"]
    images = [{"id": i + 1, "file_name": f"train/{i + 1:06d}.jpg", "width": 640, "height": 512}
              for i in range(n)]
    categories, annotations = [], []
    cursor = 0
    ann_id = 1
    for cid, (name, (n_img, n_inst)) in enumerate(counts["classes"].items()):
        if not 0 < n_img <= n or n_inst < n_img:
            raise ValueError(f"infeasible counts for {name}: {n_img} images, {n_inst} instances")
        categories.append({"id": cid, "name": name, "supercategory": "emergency"})
        base, extra = divmod(n_inst, n_img)
        for k in range(n_img):
            image_id = (cursor + k) % n + 1
            for _ in range(base + (k < extra)):
                ann = {"id": ann_id, "image_id": image_id, "category_id": cid}
                if with_bbox:
                    ann["bbox"] = [10.0, 10.0, 32.0, 32.0]
                annotations.append(ann)
                ann_id += 1
        cursor = (cursor + n_img) % n
    return {"images": images, "categories": categories, "annotations": annotations}
