"""4D Gaussian splatting engine with pseudo-frame distillation"""
