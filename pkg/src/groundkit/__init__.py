"""groundkit: zero-shot phrase localization from contrastive vision-language weights.

The pipeline: extract a per-pixel spatial embedding map from a ViT (masked
region-token attention over superpixels) or ResNet-style (per-patch value
pooling over a dilated backbone) image tower, score every pixel against a
text embedding, and search the resulting score map for the best box.
"""

__version__ = "0.1.0"
