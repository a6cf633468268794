"""Regenerate the bundled model profiles under src/splitbench/data/profiles.

Block times are per-batch means in milliseconds at batch size 8, for a CPU
edge device ("cpu" class) and a GPU server ("gpu" class).

Activation sizes are analytic: each block's output tensor is C x H x H float32
values per image for a 32x32 RGB input, times the batch. Blocks after global
pooling emit flat C-vectors (H = 1). Where a stride-2 layer would shrink a map
below 1x1 the size is clamped to 1x1. VGG16's adaptive average pool expands
its 1x1 map to 7x7, and AlexNet's expands to 6x6.

Usage: python tools/gen_profiles.py [output_dir]
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from splitbench.profiles import BlockProfile, ModelMeta, ModelProfile, dumps_model_profile  # noqa: E402

BATCH = 8
BYTES_PER_VALUE = 4
INPUT_BYTES = BATCH * BYTES_PER_VALUE * 3 * 32 * 32

# name, cpu ms, gpu ms, output channels, output height (= width)
BLOCKS = {
    "mobilenetv2": [
        ("features_0", 124.78, 0.06, 32, 16),
        ("features_1", 196.01, 0.08, 16, 16),
        ("features_2", 511.51, 0.18, 24, 8),
        ("features_3", 208.52, 0.12, 24, 8),
        ("features_4", 121.93, 0.09, 32, 4),
        ("features_5", 74.67, 0.1, 32, 4),
        ("features_6", 76.74, 0.1, 32, 4),
        ("features_7", 49.31, 0.09, 64, 2),
        ("features_8", 40.62, 0.1, 64, 2),
        ("features_9", 41.26, 0.1, 64, 2),
        ("features_10", 40.61, 0.1, 64, 2),
        ("features_11", 42.14, 0.1, 96, 2),
        ("features_12", 63.5, 0.1, 96, 2),
        ("features_13", 61.01, 0.1, 96, 2),
        ("features_14", 43.82, 0.1, 160, 1),
        ("features_15", 37.42, 0.1, 160, 1),
        ("features_16", 36.92, 0.1, 160, 1),
        ("features_17", 42.02, 0.1, 320, 1),
        ("features_18", 23.91, 0.04, 1280, 1),
        ("Classifier_Dropout", 0.02, 0.01, 1280, 1),
        ("Classifier_Linear", 0.39, 0.02, 10, 1),
    ],
    "resnet18": [
        ("conv1", 236.58, 0.07, 64, 16),
        ("bn1", 16.38, 0.03, 64, 16),
        ("relu", 24.79, 0.02, 64, 16),
        ("maxpool", 36.17, 0.03, 64, 8),
        ("layer1_block0", 210.43, 0.12, 64, 8),
        ("layer1_block1", 210.04, 0.12, 64, 8),
        ("layer2_block0", 150.93, 0.13, 128, 4),
        ("layer2_block1", 151.93, 0.11, 128, 4),
        ("layer3_block0", 129.53, 0.12, 256, 2),
        ("layer3_block1", 142.87, 0.11, 256, 2),
        ("layer4_block0", 133.32, 0.13, 512, 1),
        ("layer4_block1", 157.03, 0.13, 512, 1),
        ("avgpool", 0.75, 0.01, 512, 1),
        ("fc", 0.53, 0.01, 10, 1),
    ],
    "inceptionv3": [
        ("Conv2d_1a_3x3", 207.7, 0.08, 32, 15),
        ("Conv2d_2a_3x3", 264.64, 0.14, 32, 13),
        ("Conv2d_2b_3x3", 540.67, 0.27, 64, 13),
        ("MaxPool_3a_3x3", 61.54, 0.05, 64, 6),
        ("Conv2d_3b_1x1", 114.57, 0.06, 80, 6),
        ("Conv2d_4a_3x3", 510.83, 0.27, 192, 4),
        ("MaxPool_5a_3x3", 42.41, 0.03, 192, 1),
        ("Mixed_5b", 297.07, 0.31, 256, 1),
        ("Mixed_5c", 333.88, 0.33, 288, 1),
        ("Mixed_5d", 346.36, 0.33, 288, 1),
        ("Mixed_6a", 339.84, 0.23, 768, 1),
        ("Mixed_6b", 339.04, 0.36, 768, 1),
        ("Mixed_6c", 410.21, 0.38, 768, 1),
        ("Mixed_6d", 409.63, 0.38, 768, 1),
        ("Mixed_6e", 479.89, 0.4, 768, 1),
        ("AuxLogits", 23.6, 0.13, 768, 1),
        ("Mixed_7a", 242.97, 0.23, 1280, 1),
        ("Mixed_7b", 267.56, 0.35, 2048, 1),
        ("Mixed_7c", 372.7, 0.37, 2048, 1),
        ("AdaptiveAvgPool", 1.87, 0.01, 2048, 1),
        ("Dropout", 0.02, 0.01, 2048, 1),
        ("FC_layer", 0.55, 0.02, 10, 1),
    ],
    "resnet50": [
        ("conv1", 230.42, 0.07, 64, 16),
        ("bn1", 15.58, 0.03, 64, 16),
        ("relu", 24.96, 0.02, 64, 16),
        ("maxpool", 36.3, 0.03, 64, 8),
        ("layer1_block0", 634.17, 0.24, 256, 8),
        ("layer1_block1", 463.71, 0.19, 256, 8),
        ("layer1_block2", 463.99, 0.2, 256, 8),
        ("layer2_block0", 600.5, 0.26, 512, 4),
        ("layer2_block1", 280.67, 0.14, 512, 4),
        ("layer2_block2", 280.18, 0.14, 512, 4),
        ("layer2_block3", 279.54, 0.14, 512, 4),
        ("layer3_block0", 382.69, 0.24, 1024, 2),
        ("layer3_block1", 195.43, 0.13, 1024, 2),
        ("layer3_block2", 196.21, 0.13, 1024, 2),
        ("layer3_block3", 197.28, 0.13, 1024, 2),
        ("layer3_block4", 197.09, 0.13, 1024, 2),
        ("layer3_block5", 198.02, 0.13, 1024, 2),
        ("layer4_block0", 367.9, 0.26, 2048, 1),
        ("layer4_block1", 192.66, 0.15, 2048, 1),
        ("layer4_block2", 194.45, 0.15, 2048, 1),
        ("avgpool", 1.54, 0.01, 2048, 1),
        ("fc", 0.55, 0.02, 10, 1),
    ],
    "alexnet": [
        ("features_0_Conv", 87.42, 0.07, 64, 7),
        ("features_1_ReLU", 5.81, 0.01, 64, 7),
        ("features_2_MaxPool", 8.41, 0.01, 64, 3),
        ("features_3_Conv", 101.29, 0.11, 192, 3),
        ("features_4_ReLU", 4.2, 0.01, 192, 3),
        ("features_5_MaxPool", 6.04, 0.01, 192, 1),
        ("features_6_Conv", 59.05, 0.07, 384, 1),
        ("features_7_ReLU", 2.21, 0.01, 384, 1),
        ("features_8_Conv", 94.63, 0.07, 256, 1),
        ("features_9_ReLU", 1.41, 0.01, 256, 1),
        ("features_10_Conv", 57.54, 0.06, 256, 1),
        ("features_11_ReLU", 1.34, 0.01, 256, 1),
        ("features_12_MaxPool", 2.21, 0.01, 256, 1),
        ("AdaptiveAvgPool", 0.47, 0.01, 256, 6),
        ("classifier_0_Dropout", 0.02, 0.01, 9216, 1),
        ("classifier_1_Linear", 261.81, 0.19, 4096, 1),
        ("classifier_2_ReLU", 0.19, 0.01, 4096, 1),
        ("classifier_3_Dropout", 0.02, 0.01, 4096, 1),
        ("classifier_4_Linear", 128.4, 0.06, 4096, 1),
        ("classifier_5_ReLU", 0.19, 0.01, 4096, 1),
        ("classifier_6_Linear", 0.85, 0.03, 10, 1),
    ],
    "vgg16": [
        ("features_0", 874.71, 0.36, 64, 32),
        ("features_1", 99.27, 0.22, 64, 32),
        ("features_2", 1703.88, 0.88, 64, 32),
        ("features_3", 98.76, 0.22, 64, 32),
        ("features_4", 128.19, 0.2, 64, 16),
        ("features_5", 807.64, 0.31, 128, 16),
        ("features_6", 50.33, 0.03, 128, 16),
        ("features_7", 1280.36, 0.58, 128, 16),
        ("features_8", 50.36, 0.03, 128, 16),
        ("features_9", 51.77, 0.09, 128, 8),
        ("features_10", 581.01, 0.28, 256, 8),
        ("features_11", 25.44, 0.02, 256, 8),
        ("features_12", 1293.22, 0.54, 256, 8),
        ("features_13", 25.54, 0.02, 256, 8),
        ("features_14", 1281.43, 0.55, 256, 8),
        ("features_15", 25.22, 0.02, 256, 8),
        ("features_16", 26.59, 0.02, 256, 4),
        ("features_17", 606.41, 0.28, 512, 4),
        ("features_18", 11.64, 0.01, 512, 4),
        ("features_19", 1396.95, 0.5, 512, 4),
        ("features_20", 11.83, 0.01, 512, 4),
        ("features_21", 1392.39, 0.5, 512, 4),
        ("features_22", 11.94, 0.01, 512, 4),
        ("features_23", 15.17, 0.02, 512, 2),
        ("features_24", 316.19, 0.16, 512, 2),
        ("features_25", 3.13, 0.01, 512, 2),
        ("features_26", 337.77, 0.16, 512, 2),
        ("features_27", 3.2, 0.01, 512, 2),
        ("features_28", 331.81, 0.16, 512, 2),
        ("features_29", 3.18, 0.01, 512, 2),
        ("features_30", 3.6, 0.01, 512, 1),
        ("avgpool", 0.97, 0.02, 512, 7),
        ("classifier_0", 718.39, 0.48, 4096, 1),
        ("classifier_1", 0.19, 0.01, 4096, 1),
        ("classifier_2", 0.02, 0.01, 4096, 1),
        ("classifier_3", 101.94, 0.06, 4096, 1),
        ("classifier_4", 0.18, 0.01, 4096, 1),
        ("classifier_5", 0.02, 0.01, 4096, 1),
        ("classifier_6", 0.82, 0.03, 10, 1),
    ],
}

META = {
    "mobilenetv2": ModelMeta(2_236_682, 8.8, 21),
    "resnet18": ModelMeta(11_689_512, 43.0, 14),
    "inceptionv3": ModelMeta(24_371_444, 97.0, 22),
    "resnet50": ModelMeta(25_557_032, 91.0, 22),
    "alexnet": ModelMeta(61_100_840, 234.0, 21),
    "vgg16": ModelMeta(138_357_544, 528.0, 39),
}


def build(name: str) -> ModelProfile:
    blocks = tuple(
        BlockProfile(block, {"cpu": round(cpu / 1000.0, 9), "gpu": round(gpu / 1000.0, 9)},
                     BATCH * BYTES_PER_VALUE * ch * hw * hw)
        for block, cpu, gpu, ch, hw in BLOCKS[name]
    )
    return ModelProfile(name, BATCH, INPUT_BYTES, blocks, META[name]).validate()


def main(argv: list[str]) -> int:
    out = Path(argv[1]) if len(argv) > 1 else Path(__file__).resolve().parents[1] / "src/splitbench/data/profiles"
    out.mkdir(parents=True, exist_ok=True)
    for name in BLOCKS:
        text = "# generated by tools/gen_profiles.py; times in seconds, out in bytes\n"
        text += dumps_model_profile(build(name))
        (out / f"{name}.profile").write_text(text, encoding="utf-8")
        print(out / f"{name}.profile")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
