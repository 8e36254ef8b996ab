"""dedit: a desk-scale diffusion image editor.

Every image is split into labeled items; each item is driven by its own
prompt through grouped cross-attention, so editing one item's prompt or
mask leaves the others' control flow untouched.
"""

__version__ = "0.1.0"
