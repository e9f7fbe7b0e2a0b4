# temporary: ambiguity/detection/training not written yet; stub for install
