"""
Progressive point cloud tracker: a shared EdgeConv backbone, a memory of the
most recent frames, cascaded spatial-temporal transformer stages and a final
9DoF box head.
"""
