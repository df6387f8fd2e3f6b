"""Published (utility, forget, NoMUS) mean triples used as arithmetic fixtures."""

# (backbone, benchmark, row, utility, forget, nomus)
MAIN_RESULTS = [
    ('ResNet18', 'MUFAC', 'Pre-trained', 59.52, 21.36, 58.4),
    ('ResNet18', 'MUCAC', 'Pre-trained', 88.52, 4.19, 90.07),
    ('ResNet18', 'MUFAC', 'Re-train', 47.34, 3.09, 70.58),
    ('ResNet18', 'MUCAC', 'Re-train', 87.62, 3.03, 90.77),
    ('ResNet18', 'MUFAC', 'Finetune', 59.57, 19.89, 59.9),
    ('ResNet18', 'MUCAC', 'Finetune', 91.05, 3.17, 92.35),
    ('ResNet18', 'MUFAC', 'CF-k', 59.42, 20.11, 59.6),
    ('ResNet18', 'MUCAC', 'CF-k', 91.96, 4.29, 91.69),
    ('ResNet18', 'MUFAC', 'AdvNegGrad', 49.37, 0.56, 74.13),
    ('ResNet18', 'MUCAC', 'AdvNegGrad', 88.51, 3.32, 90.93),
    ('ResNet18', 'MUFAC', 'UNSIR', 59.07, 20.27, 59.27),
    ('ResNet18', 'MUCAC', 'UNSIR', 91.98, 3.61, 92.38),
    ('ResNet18', 'MUFAC', 'SCRUB', 52.45, 0.99, 75.23),
    ('ResNet18', 'MUCAC', 'SCRUB', 90.09, 2.62, 92.43),
    ('ResNet18', 'MUFAC', 'ARU', 59.25, 0.61, 79.01),
    ('ResNet18', 'MUCAC', 'ARU', 90.33, 2.0, 93.17),
    ('ViT-B-16', 'MUFAC', 'Pre-trained', 66.54, 12.56, 70.71),
    ('ViT-B-16', 'MUCAC', 'Pre-trained', 95.74, 8.95, 88.92),
    ('ViT-B-16', 'MUFAC', 'Re-train', 62.7, 5.94, 75.4),
    ('ViT-B-16', 'MUCAC', 'Re-train', 95.07, 2.1, 95.43),
    ('ViT-B-16', 'MUFAC', 'Finetune', 64.78, 2.03, 80.36),
    ('ViT-B-16', 'MUCAC', 'Finetune', 94.5, 3.3, 93.95),
    ('ViT-B-16', 'MUFAC', 'CF-k', 64.98, 2.37, 80.12),
    ('ViT-B-16', 'MUCAC', 'CF-k', 94.91, 3.78, 93.67),
    ('ViT-B-16', 'MUFAC', 'AdvNegGrad', 63.1, 1.04, 80.51),
    ('ViT-B-16', 'MUCAC', 'AdvNegGrad', 94.08, 0.42, 96.62),
    ('ViT-B-16', 'MUFAC', 'UNSIR', 64.93, 2.26, 80.2),
    ('ViT-B-16', 'MUCAC', 'UNSIR', 94.72, 3.73, 93.62),
    ('ViT-B-16', 'MUFAC', 'SCRUB', 65.93, 1.45, 81.52),
    ('ViT-B-16', 'MUCAC', 'SCRUB', 93.74, 4.03, 92.84),
    ('ViT-B-16', 'MUFAC', 'ARU', 62.44, 0.96, 80.26),
    ('ViT-B-16', 'MUCAC', 'ARU', 94.63, 2.96, 94.36),
    ('ViT-L-14', 'MUFAC', 'Pre-trained', 71.35, 18.9, 66.77),
    ('ViT-L-14', 'MUCAC', 'Pre-trained', 95.63, 6.58, 91.23),
    ('ViT-L-14', 'MUFAC', 'Re-train', 67.23, 5.05, 78.56),
    ('ViT-L-14', 'MUCAC', 'Re-train', 94.88, 1.25, 96.19),
    ('ViT-L-14', 'MUFAC', 'Finetune', 67.75, 8.34, 75.53),
    ('ViT-L-14', 'MUCAC', 'Finetune', 94.97, 4.22, 93.27),
    ('ViT-L-14', 'MUFAC', 'CF-k', 68.98, 10.13, 74.36),
    ('ViT-L-14', 'MUCAC', 'CF-k', 94.85, 4.41, 93.01),
    ('ViT-L-14', 'MUFAC', 'AdvNegGrad', 66.33, 2.76, 80.4),
    ('ViT-L-14', 'MUCAC', 'AdvNegGrad', 94.28, 0.41, 96.72),
    ('ViT-L-14', 'MUFAC', 'UNSIR', 66.81, 5.42, 77.98),
    ('ViT-L-14', 'MUCAC', 'UNSIR', 94.52, 2.42, 94.84),
    ('ViT-L-14', 'MUFAC', 'SCRUB', 67.28, 2.92, 80.72),
    ('ViT-L-14', 'MUCAC', 'SCRUB', 94.42, 3.51, 93.7),
    ('ViT-L-14', 'MUFAC', 'ARU', 65.07, 0.53, 82.01),
    ('ViT-L-14', 'MUCAC', 'ARU', 94.98, 2.87, 94.62),
]

# (method, setting, utility, forget, nomus); backbone ViT-B-16 on MUFAC
ABLATION_RESULTS = [
    ('CF-k', 'k: 3', 65.21, 7.81, 74.79),
    ('CF-k', 'k: 6', 64.91, 4.36, 78.09),
    ('CF-k', 'k: 9', 64.98, 2.37, 80.12),
    ('ARU', 'pruning ratio: 10%', 62.44, 0.96, 80.26),
    ('ARU', 'pruning ratio: 30%', 53.03, 5.95, 70.57),
    ('ARU', 'pruning ratio: 50%', 37.57, 3.76, 65.02),
    ('ARU', 'pruning ratio: 70%', 31.06, 3.91, 61.62),
    ('ARU', 'pruning ratio: 90%', 30.1, 5.07, 59.99),
    ('SCRUB', 'coefficient: 1.0', 33.76, 4.73, 62.15),
    ('SCRUB', 'coefficient: 0.1', 65.93, 1.45, 81.52),
    ('SCRUB', 'coefficient: 0.01', 63.22, 1.71, 79.9),
]
