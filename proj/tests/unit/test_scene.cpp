#include "oracles.hpp"

#include "cbmaudit/scene/dataset.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <set>

using namespace cbmaudit;
using namespace cbmaudit::scene;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name)
{
    auto p = fs::temp_directory_path() / ("cbmaudit_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

Card C(int rank, Suit s) { return Card{rank, s}; }

} // namespace

TEST(Cards, DeckIndexRoundTrip)
{
    const auto deck = enumerate_deck();
    ASSERT_EQ(deck.size(), 52u);
    for (int i = 0; i < 52; ++i) EXPECT_EQ(card_index(card_from_index(i)), i);
    EXPECT_EQ(card_name(card_from_index(0)), card_name(C(2, Suit::clubs)));
    EXPECT_THROW(card_from_index(52), Error);
}

TEST(Cards, RankHandMatchesBruteForceOnEveryTriplet)
{
    std::array<int, hand_rank_count> counts{};
    int total = 0;
    for (int a = 0; a < 52; ++a)
        for (int b = a + 1; b < 52; ++b)
            for (int c = b + 1; c < 52; ++c) {
                const Triplet t{card_from_index(a), card_from_index(b), card_from_index(c)};
                const auto r = rank_hand(t);
                ASSERT_EQ(r, oracle::classify(t));
                ++counts[static_cast<int>(r)];
                ++total;
            }
    EXPECT_EQ(total, 22100);
    EXPECT_EQ(counts[static_cast<int>(HandRank::straight_flush)], 48);
    EXPECT_EQ(counts[static_cast<int>(HandRank::three_of_a_kind)], 52);
    EXPECT_EQ(counts[static_cast<int>(HandRank::straight)], 720);
    EXPECT_EQ(counts[static_cast<int>(HandRank::flush)], 1096);
    EXPECT_EQ(counts[static_cast<int>(HandRank::pair)], 3744);
    EXPECT_EQ(counts[static_cast<int>(HandRank::high_card)], 16440);
}

TEST(Cards, AceCountsLowAndHigh)
{
    const Triplet low{C(14, Suit::clubs), C(2, Suit::hearts), C(3, Suit::spades)};
    const Triplet high{C(12, Suit::clubs), C(13, Suit::hearts), C(14, Suit::spades)};
    const Triplet wrap{C(13, Suit::clubs), C(14, Suit::hearts), C(2, Suit::spades)};
    EXPECT_EQ(rank_hand(low), HandRank::straight);
    EXPECT_EQ(rank_hand(high), HandRank::straight);
    EXPECT_EQ(rank_hand(wrap), HandRank::high_card);
}

TEST(Cards, RankHandRejectsInvalidHands)
{
    const std::vector<Card> two{C(2, Suit::clubs), C(3, Suit::clubs)};
    EXPECT_THROW(rank_hand(two), Error);
    const Triplet dup{C(2, Suit::clubs), C(2, Suit::clubs), C(5, Suit::hearts)};
    EXPECT_THROW(rank_hand(dup), Error);
}

TEST(Cards, TripletsOfRankPartitionTheDeck)
{
    std::size_t n = 0;
    for (auto r : all_hand_ranks) {
        for (const auto& t : triplets_of_rank(r)) ASSERT_EQ(rank_hand(t), r);
        n += triplets_of_rank(r).size();
    }
    EXPECT_EQ(n, 22100u);
}

TEST(Cards, ClassLevelTableIsConsistent)
{
    const auto& table = class_level_table();
    for (auto r : all_hand_ranks) EXPECT_EQ(rank_hand(table[static_cast<int>(r)]), r);
    const auto& cards = class_level_cards();
    ASSERT_EQ(cards.size(), 11u);
    EXPECT_EQ(concept_count(ConceptScheme::class_level11), 11);
    // rank-then-suit order
    for (std::size_t i = 1; i < cards.size(); ++i)
        EXPECT_TRUE(cards[i - 1].rank < cards[i].rank ||
                    (cards[i - 1].rank == cards[i].rank && cards[i - 1].suit < cards[i].suit));
    EXPECT_EQ(*concept_index(C(2, Suit::hearts), ConceptScheme::class_level11), 0);
    EXPECT_EQ(*concept_index(C(10, Suit::hearts), ConceptScheme::class_level11), 10);
    EXPECT_FALSE(concept_index(C(7, Suit::clubs), ConceptScheme::class_level11).has_value());
}

TEST(Cards, ClassLevelCooccurrenceMatchesTable)
{
    // exhaustive expectation: concepts i and j co-occur in class c iff both are in the table row
    const auto& table = class_level_table();
    for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) {
            if (i == j) continue;
            int expected = 0;
            for (const auto& row : table) {
                const auto bits = concept_vector(row, ConceptScheme::class_level11);
                expected += bits[static_cast<std::size_t>(i)] && bits[static_cast<std::size_t>(j)];
            }
            int seen = 0;
            for (const auto& row : table) {
                bool a = false, b = false;
                for (const auto& c : row) {
                    a |= c == concept_card(i, ConceptScheme::class_level11);
                    b |= c == concept_card(j, ConceptScheme::class_level11);
                }
                seen += a && b;
            }
            EXPECT_EQ(seen, expected);
        }
    // two of hearts and four of hearts only ever appear in the straight flush row
    const auto h2 = *concept_index(C(2, Suit::hearts), ConceptScheme::class_level11);
    const auto h4 = *concept_index(C(4, Suit::hearts), ConceptScheme::class_level11);
    for (const auto& row : table) {
        const auto bits = concept_vector(row, ConceptScheme::class_level11);
        EXPECT_EQ(bits[static_cast<std::size_t>(h2)], bits[static_cast<std::size_t>(h4)]);
    }
}

TEST(Cards, ConceptVectorHasThreeBits)
{
    const Triplet t{C(2, Suit::clubs), C(14, Suit::spades), C(7, Suit::hearts)};
    const auto bits = concept_vector(t, ConceptScheme::full52);
    int n = 0;
    for (auto b : bits) n += b;
    EXPECT_EQ(n, 3);
    EXPECT_EQ(bits[51], 1);
    EXPECT_THROW(concept_vector(t, ConceptScheme::class_level11), Error);
}

TEST(Cards, RegimeSchemeMismatchRejected)
{
    EXPECT_THROW(check_regime_scheme(SamplingRegime::class_level_table, ConceptScheme::full52), Error);
    EXPECT_THROW(check_regime_scheme(SamplingRegime::poker_balanced, ConceptScheme::class_level11), Error);
    EXPECT_NO_THROW(check_regime_scheme(SamplingRegime::random_uniform, ConceptScheme::full52));
}

TEST(Render, DeterministicAndMasksCoverCards)
{
    Rng a(5), b(5);
    const auto sa = random_scene_spec(a, 96, 5);
    const auto sb = random_scene_spec(b, 96, 5);
    const Triplet t{C(2, Suit::clubs), C(9, Suit::hearts), C(13, Suit::spades)};
    const auto ra = render_scene(sa, t), rb = render_scene(sb, t);
    EXPECT_EQ(ra.image, rb.image);
    for (std::size_t c = 0; c < 3; ++c) {
        EXPECT_EQ(ra.masks[c], rb.masks[c]);
        // a card of width ~0.22-0.27 of 96 px covers at least a few hundred pixels
        EXPECT_GT(ra.masks[c].area(), 200u);
    }
    // no pixel belongs to two masks
    for (std::size_t p = 0; p < ra.masks[0].bits.size(); ++p)
        EXPECT_LE(ra.masks[0].bits[p] + ra.masks[1].bits[p] + ra.masks[2].bits[p], 1);
}

TEST(Render, MaskCentroidsAreLeftToRight)
{
    Rng rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        const auto spec = random_scene_spec(rng, 96, rng());
        const auto r = render_scene(spec, Triplet{C(3, Suit::clubs), C(4, Suit::clubs), C(5, Suit::clubs)});
        std::array<double, 3> cx{};
        for (std::size_t c = 0; c < 3; ++c) {
            double sx = 0;
            for (int y = 0; y < 96; ++y)
                for (int x = 0; x < 96; ++x) sx += r.masks[c].at(x, y) * x;
            cx[c] = sx / static_cast<double>(r.masks[c].area());
        }
        EXPECT_LT(cx[0], cx[1]);
        EXPECT_LT(cx[1], cx[2]);
    }
}

TEST(Render, OverlappingPlacementRejected)
{
    SceneSpec spec;
    spec.image_size = 96;
    for (auto& p : spec.cards) p = CardPlacement{48, 48, 0.25, 0};
    EXPECT_THROW(render_scene(spec, Triplet{C(3, Suit::clubs), C(4, Suit::clubs), C(5, Suit::clubs)}), Error);
}

TEST(Image, PngRoundTrip)
{
    const auto dir = temp_dir("png");
    RgbImage img(7, 5);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<std::uint8_t>(i * 37);
    write_png(dir / "a.png", img);
    EXPECT_EQ(read_png_rgb(dir / "a.png"), img);
    Mask m(4, 3);
    m.at(1, 2) = 1;
    write_png(dir / "m.png", m);
    EXPECT_EQ(read_png_mask(dir / "m.png"), m);
    EXPECT_THROW(read_png_rgb(dir / "missing.png"), Error);
}

TEST(Dataset, PokerBalancedScheduleIsUniform)
{
    DatasetConfig cfg;
    cfg.count = 600;
    cfg.master_seed = 3;
    const auto schedule = class_schedule(cfg);
    std::array<int, 6> h{};
    for (auto r : schedule) ++h[static_cast<int>(r)];
    for (int v : h) EXPECT_EQ(v, 100);
}

TEST(Dataset, GenerateWritesManifestAndIsReproducible)
{
    const auto d1 = temp_dir("ds1"), d2 = temp_dir("ds2");
    DatasetConfig cfg;
    cfg.count = 24;
    cfg.image_size = 64;
    cfg.master_seed = 99;
    const auto m1 = generate_dataset(cfg, d1);
    cfg.threads = 3;
    const auto m2 = generate_dataset(cfg, d2);
    EXPECT_EQ(m1, m2);
    EXPECT_EQ(read_manifest(d1 / "manifest.json"), m1);
    int train = 0;
    for (const auto& s : m1.samples) {
        train += s.split == Split::train;
        EXPECT_EQ(rank_hand(Triplet{card_from_index(s.concepts[0]), card_from_index(s.concepts[1]),
                                    card_from_index(s.concepts[2])}),
                  s.task);
        EXPECT_EQ(read_png_rgb(d1 / s.image), read_png_rgb(d2 / s.image));
    }
    EXPECT_EQ(train, train_count(24, 0.7));
    const auto hist = class_histogram(m1);
    for (int v : hist) EXPECT_EQ(v, 4);

    const auto split = load_split(m1, d1, Split::validation);
    EXPECT_EQ(split.count(), static_cast<std::size_t>(24 - train));
    EXPECT_EQ(split.pixels.size(), split.count() * 3 * 64 * 64);
}

TEST(Dataset, CorruptManifestDetected)
{
    const auto dir = temp_dir("corrupt");
    std::ofstream(dir / "manifest.json") << "{ not json";
    try {
        read_manifest(dir / "manifest.json");
        FAIL() << "expected an error";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::corrupt);
    }
}

TEST(Dataset, RandomRegimeMatchesEnumeration)
{
    Rng rng(2024);
    std::array<int, 6> h{};
    const int n = 20000;
    for (int i = 0; i < n; ++i) ++h[static_cast<int>(sample_triplet(SamplingRegime::random_uniform, ConceptScheme::full52, rng).rank)];
    const double p = 16440.0 / 22100.0;
    const double sigma = std::sqrt(n * p * (1 - p));
    EXPECT_NEAR(h[static_cast<int>(HandRank::high_card)], n * p, 4 * sigma);
}

TEST(Dataset, CooccurrenceIsSymmetricWithZeroDiagonal)
{
    const auto dir = temp_dir("cooc");
    DatasetConfig cfg;
    cfg.count = 30;
    cfg.image_size = 48;
    cfg.regime = SamplingRegime::class_level_table;
    cfg.scheme = ConceptScheme::class_level11;
    const auto m = generate_dataset(cfg, dir);
    const auto co = cooccurrence_matrix(m);
    for (std::size_t i = 0; i < co.size(); ++i) {
        EXPECT_EQ(co[i][i], 0);
        for (std::size_t j = 0; j < co.size(); ++j) EXPECT_EQ(co[i][j], co[j][i]);
    }
}
