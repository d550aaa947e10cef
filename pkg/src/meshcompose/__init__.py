"""Collision-aware composition of triangle meshes from guidance geometry."""
