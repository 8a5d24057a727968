#!/usr/bin/env python3
"""Regenerate the committed synthetic corpus fixture.

Produces 20 cases over 5 hazard categories (4 each), one tiny seeded
noise PNG per case, a stratified library/test split, and the embedding
store for the library split. Everything is deterministic, so rerunning
this script must leave the committed files byte-identical.
"""

from __future__ import annotations

import sys
from pathlib import Path

from PIL import Image

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from rdrag.cases import Case, Corpus, SplitSpec, save_corpus, split_corpus  # noqa: E402
from rdrag.embeddings import DeterministicProvider, build_store  # noqa: E402
from rdrag.rng import SplitMix64  # noqa: E402

FIXTURE_DIR = Path(__file__).resolve().parent.parent / "fixtures" / "corpus"

IMAGE_SIDE = 12
SPLIT_SEED = 7
LIBRARY_COUNT = 10
EMBED_DIM = 8
EMBED_SEED = 0

CASES = [
    ("配电箱未及时锁闭", "三号楼二层临边配电箱箱门敞开，箱内接线端子外露", "立即加锁并由专职电工每日巡查配电箱"),
    ("配电箱未及时锁闭", "地下室一级配电箱未上锁，周边堆放杂物", "清理杂物，配电箱上锁并挂警示牌"),
    ("配电箱未及时锁闭", "塔吊旁分配电箱门锁损坏，箱门随风摆动", "更换门锁并固定箱门，专人验收"),
    ("配电箱未及时锁闭", "钢筋加工棚配电箱敞开且无防雨措施", "加装防雨罩，作业结束后及时锁闭"),
    ("高处作业未正确使用安全带", "外架作业人员安全带挂钩未系挂于稳固构件", "责令停工整改，规范系挂安全带后方可作业"),
    ("高处作业未正确使用安全带", "屋面临边作业工人未佩戴安全带", "撤下作业人员，补办高处作业交底"),
    ("高处作业未正确使用安全带", "电梯井口吊篮作业人员安全带低挂高用", "纠正系挂方式，设置专用挂点"),
    ("高处作业未正确使用安全带", "钢结构吊装工人在梁上行走未使用安全带", "架设生命线，安全带全程系挂"),
    ("基坑支护措施不到位", "基坑东侧支护桩间土体剥落，未及时挂网喷浆", "组织支护单位按方案补强并加强监测"),
    ("基坑支护措施不到位", "基坑边坡出现裂缝，支护措施未跟进", "立即停止坑内作业，裂缝区域卸载加固"),
    ("基坑支护措施不到位", "基坑南侧超挖，支撑体系未按要求架设", "回填反压，按设计恢复支撑后再开挖"),
    ("基坑支护措施不到位", "基坑内积水浸泡支护结构底部", "增设排水设施，检测支护结构稳定性"),
    ("灭火器未按规定要求放置", "木工棚内灭火器平放于地面，被模板遮挡", "按规范重新配置灭火器并设置明显标识"),
    ("灭火器未按规定要求放置", "油漆仓库门口灭火器箱内无灭火器", "补配合格灭火器，落实防火责任人"),
    ("灭火器未按规定要求放置", "配电房灭火器悬挂过高，取用不便", "调整悬挂高度至规范范围并标识"),
    ("灭火器未按规定要求放置", "食堂液化气间灭火器距离用火点过远", "将灭火器移至用火点附近显眼位置"),
    ("安全警示标志标识缺失或设置不规范", "基坑临边未设置警示标志，夜间无警示灯", "补设警示标志并落实专人定期检查"),
    ("安全警示标志标识缺失或设置不规范", "塔吊作业半径内未悬挂警示标识", "悬挂限载与警戒标识，划定警戒区"),
    ("安全警示标志标识缺失或设置不规范", "临时用电箱体上安全警示贴纸脱落", "重新张贴警示标识并定期巡查"),
    ("安全警示标志标识缺失或设置不规范", "施工升降机出入口警示牌被物料遮挡", "清移物料，警示牌保持醒目无遮挡"),
]


def make_image(case_id: str, path: Path) -> None:
    """Seeded RGB noise; pixel bytes depend only on the case id."""
    rng = SplitMix64.for_key(0xF1B7, case_id)
    pixels = bytes(rng.next_below(256) for _ in range(IMAGE_SIDE * IMAGE_SIDE * 3))
    image = Image.frombytes("RGB", (IMAGE_SIDE, IMAGE_SIDE), pixels)
    image.save(path, format="PNG")


def main() -> None:
    images_dir = FIXTURE_DIR / "images"
    images_dir.mkdir(parents=True, exist_ok=True)

    cases = []
    for i, (category, description, remediation) in enumerate(CASES, start=1):
        case_id = f"case_{i:03d}"
        make_image(case_id, images_dir / f"{case_id}.png")
        cases.append(
            Case(
                id=case_id,
                image_ref=f"images/{case_id}.png",
                category=category,
                description=description,
                remediation=remediation,
            )
        )
    categories = tuple(dict.fromkeys(c.category for c in cases))
    corpus = Corpus(cases=tuple(cases), categories=categories, base_dir=FIXTURE_DIR)

    save_corpus(corpus, FIXTURE_DIR / "cases_untagged.jsonl")

    tagged = split_corpus(corpus, SplitSpec(library_count=LIBRARY_COUNT, seed=SPLIT_SEED))
    save_corpus(tagged, FIXTURE_DIR / "cases.jsonl")

    provider = DeterministicProvider(dim=EMBED_DIM, seed=EMBED_SEED)
    store = build_store(provider, tagged, split_filter="library", out_path=FIXTURE_DIR / "store.rdem")

    library = tagged.subset("library")
    print(f"corpus: {len(tagged)} cases, {len(categories)} categories")
    print(f"library: {sorted(c.id for c in library)}")
    print(f"store: {len(store)} entries, dim {store.dim}")


if __name__ == "__main__":
    main()
