#pragma once

// Playing cards, Three Card Poker hand ranks, concept schemes and the
// triplet samplers that define the three dataset regimes.

#include "cbmaudit/common/error.hpp"
#include "cbmaudit/common/seed.hpp"

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cbmaudit::scene {

enum class Suit : std::uint8_t { clubs = 0, diamonds = 1, hearts = 2, spades = 3 };

constexpr int deck_size = 52;
constexpr int ranks_per_suit = 13;

/// rank in 2..14, 14 is the Ace.
struct Card {
    int rank = 2;
    Suit suit = Suit::clubs;

    friend constexpr bool operator==(const Card&, const Card&) = default;
};

/// Canonical index: suit-major, then rank. 0 is the two of clubs, 51 the ace of spades.
constexpr int card_index(Card card) noexcept
{
    return static_cast<int>(card.suit) * ranks_per_suit + (card.rank - 2);
}

inline Card card_from_index(int index)
{
    require(index >= 0 && index < deck_size, ErrorKind::invalid_argument,
            "card index out of range: " + std::to_string(index));
    return Card{index % ranks_per_suit + 2, static_cast<Suit>(index / ranks_per_suit)};
}

inline bool is_red(Suit suit) { return suit == Suit::diamonds || suit == Suit::hearts; }

inline std::vector<Card> enumerate_deck()
{
    std::vector<Card> deck;
    deck.reserve(deck_size);
    for (int i = 0; i < deck_size; ++i) deck.push_back(card_from_index(i));
    return deck;
}

inline std::string_view suit_name(Suit suit)
{
    static constexpr std::array<std::string_view, 4> names{"Clubs", "Diamonds", "Hearts", "Spades"};
    return names[static_cast<int>(suit)];
}

inline std::string_view rank_symbol(int rank)
{
    static constexpr std::array<std::string_view, 13> symbols{"2", "3", "4",  "5", "6", "7", "8",
                                                              "9", "10", "J", "Q", "K", "A"};
    return symbols.at(static_cast<std::size_t>(rank - 2));
}

/// e.g. "10 of Hearts"
inline std::string card_name(Card card)
{
    return std::string(rank_symbol(card.rank)) + " of " + std::string(suit_name(card.suit));
}

/// Three Card Poker hand ranks, strongest first.
enum class HandRank : std::uint8_t {
    straight_flush = 0,
    three_of_a_kind = 1,
    straight = 2,
    flush = 3,
    pair = 4,
    high_card = 5,
};

constexpr int hand_rank_count = 6;

constexpr std::array<HandRank, hand_rank_count> all_hand_ranks{
    HandRank::straight_flush, HandRank::three_of_a_kind, HandRank::straight,
    HandRank::flush,          HandRank::pair,            HandRank::high_card};

inline std::string_view hand_rank_name(HandRank rank)
{
    static constexpr std::array<std::string_view, hand_rank_count> names{
        "StraightFlush", "ThreeOfAKind", "Straight", "Flush", "Pair", "HighCard"};
    return names[static_cast<int>(rank)];
}

inline HandRank hand_rank_from_name(std::string_view name)
{
    for (HandRank r : all_hand_ranks)
        if (hand_rank_name(r) == name) return r;
    fail(ErrorKind::invalid_argument, "unknown hand rank: " + std::string(name));
}

using Triplet = std::array<Card, 3>;

/// Strongest Three Card Poker rank of three distinct cards. Straights count
/// with the ace both low (A-2-3) and high (Q-K-A).
inline HandRank rank_hand(std::span<const Card> cards)
{
    require(cards.size() == 3, ErrorKind::invalid_argument,
            "invalid hand: expected 3 cards, got " + std::to_string(cards.size()));
    for (const Card& c : cards)
        require(c.rank >= 2 && c.rank <= 14, ErrorKind::invalid_argument, "invalid hand: bad rank");
    require(cards[0] != cards[1] && cards[0] != cards[2] && cards[1] != cards[2],
            ErrorKind::invalid_argument, "invalid hand: duplicate cards");

    std::array<int, 3> r{cards[0].rank, cards[1].rank, cards[2].rank};
    std::sort(r.begin(), r.end());
    const bool flush = cards[0].suit == cards[1].suit && cards[1].suit == cards[2].suit;
    const bool distinct = r[0] != r[1] && r[1] != r[2];
    const bool straight = distinct && ((r[2] - r[0] == 2) || (r[0] == 2 && r[1] == 3 && r[2] == 14));

    if (straight && flush) return HandRank::straight_flush;
    if (r[0] == r[2]) return HandRank::three_of_a_kind;
    if (straight) return HandRank::straight;
    if (flush) return HandRank::flush;
    if (!distinct) return HandRank::pair;
    return HandRank::high_card;
}

/// All C(52,3) triplets of the given rank, each in ascending canonical order.
inline const std::vector<Triplet>& triplets_of_rank(HandRank rank)
{
    static const std::array<std::vector<Triplet>, hand_rank_count> table = [] {
        std::array<std::vector<Triplet>, hand_rank_count> t;
        for (int a = 0; a < deck_size; ++a)
            for (int b = a + 1; b < deck_size; ++b)
                for (int c = b + 1; c < deck_size; ++c) {
                    Triplet trip{card_from_index(a), card_from_index(b), card_from_index(c)};
                    t[static_cast<int>(rank_hand(trip))].push_back(trip);
                }
        return t;
    }();
    return table[static_cast<int>(rank)];
}

// ---------------------------------------------------------------------------
// Concept schemes

enum class ConceptScheme : std::uint8_t { full52, class_level11 };

enum class SamplingRegime : std::uint8_t { random_uniform, poker_balanced, class_level_table };

/// Fixed per-class triplets of the class-level poker variant, indexed by HandRank.
inline const std::array<Triplet, hand_rank_count>& class_level_table()
{
    using S = Suit;
    static const std::array<Triplet, hand_rank_count> table{{
        {Card{2, S::hearts}, Card{3, S::hearts}, Card{4, S::hearts}},
        {Card{4, S::clubs}, Card{4, S::diamonds}, Card{4, S::spades}},
        {Card{3, S::hearts}, Card{4, S::clubs}, Card{5, S::diamonds}},
        {Card{4, S::diamonds}, Card{6, S::diamonds}, Card{9, S::diamonds}},
        {Card{5, S::clubs}, Card{5, S::diamonds}, Card{10, S::hearts}},
        {Card{4, S::spades}, Card{5, S::diamonds}, Card{10, S::hearts}},
    }};
    return table;
}

/// The 11 class-level concepts, ordered by rank then suit. This puts the four
/// of clubs at index 2 and the six and nine of diamonds at 8 and 9.
inline const std::vector<Card>& class_level_cards()
{
    static const std::vector<Card> cards = [] {
        std::vector<Card> out;
        for (const Triplet& t : class_level_table())
            for (const Card& c : t)
                if (std::find(out.begin(), out.end(), c) == out.end()) out.push_back(c);
        std::sort(out.begin(), out.end(), [](Card a, Card b) {
            return a.rank != b.rank ? a.rank < b.rank : a.suit < b.suit;
        });
        return out;
    }();
    return cards;
}

inline int concept_count(ConceptScheme scheme)
{
    return scheme == ConceptScheme::full52 ? deck_size : static_cast<int>(class_level_cards().size());
}

/// Concept index of a card under a scheme, or nullopt when the scheme does not cover it.
inline std::optional<int> concept_index(Card card, ConceptScheme scheme)
{
    if (scheme == ConceptScheme::full52) return card_index(card);
    const auto& cards = class_level_cards();
    auto it = std::find(cards.begin(), cards.end(), card);
    if (it == cards.end()) return std::nullopt;
    return static_cast<int>(it - cards.begin());
}

inline Card concept_card(int index, ConceptScheme scheme)
{
    if (scheme == ConceptScheme::full52) return card_from_index(index);
    const auto& cards = class_level_cards();
    require(index >= 0 && index < static_cast<int>(cards.size()), ErrorKind::invalid_argument,
            "concept index out of range");
    return cards[static_cast<std::size_t>(index)];
}

inline std::vector<std::uint8_t> concept_vector(std::span<const Card> triplet, ConceptScheme scheme)
{
    std::vector<std::uint8_t> bits(static_cast<std::size_t>(concept_count(scheme)), 0);
    for (const Card& c : triplet) {
        auto idx = concept_index(c, scheme);
        require(idx.has_value(), ErrorKind::invalid_argument,
                "card outside concept scheme: " + card_name(c));
        bits[static_cast<std::size_t>(*idx)] = 1;
    }
    return bits;
}

inline std::string_view scheme_name(ConceptScheme s)
{
    return s == ConceptScheme::full52 ? "full52" : "class_level11";
}

inline std::string_view regime_name(SamplingRegime r)
{
    switch (r) {
    case SamplingRegime::random_uniform: return "random_uniform";
    case SamplingRegime::poker_balanced: return "poker_balanced";
    case SamplingRegime::class_level_table: return "class_level_table";
    }
    return "unknown";
}

inline ConceptScheme scheme_from_name(std::string_view name)
{
    if (name == "full52") return ConceptScheme::full52;
    if (name == "class_level11") return ConceptScheme::class_level11;
    fail(ErrorKind::config, "unknown concept scheme: " + std::string(name));
}

inline SamplingRegime regime_from_name(std::string_view name)
{
    if (name == "random_uniform") return SamplingRegime::random_uniform;
    if (name == "poker_balanced") return SamplingRegime::poker_balanced;
    if (name == "class_level_table") return SamplingRegime::class_level_table;
    fail(ErrorKind::config, "unknown sampling regime: " + std::string(name));
}

inline void check_regime_scheme(SamplingRegime regime, ConceptScheme scheme)
{
    const bool needs_table = regime == SamplingRegime::class_level_table;
    require(needs_table == (scheme == ConceptScheme::class_level11), ErrorKind::invalid_argument,
            "scheme/regime mismatch: " + std::string(regime_name(regime)) + " with " +
                std::string(scheme_name(scheme)));
}

struct HandDraw {
    Triplet cards;
    HandRank rank;
};

/// Draws a triplet of a fixed rank; the class is chosen by the caller.
inline HandDraw sample_triplet_of_rank(SamplingRegime regime, HandRank rank, Rng& rng)
{
    if (regime == SamplingRegime::class_level_table)
        return {class_level_table()[static_cast<int>(rank)], rank};
    require(regime == SamplingRegime::poker_balanced, ErrorKind::invalid_argument,
            "fixed-rank draws need a balanced regime");
    const auto& pool = triplets_of_rank(rank);
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    return {pool[pick(rng)], rank};
}

inline HandDraw sample_triplet(SamplingRegime regime, ConceptScheme scheme, Rng& rng)
{
    check_regime_scheme(regime, scheme);
    if (regime == SamplingRegime::random_uniform) {
        std::array<int, 3> idx{};
        std::uniform_int_distribution<int> pick(0, deck_size - 1);
        for (int n = 0; n < 3;) {
            int v = pick(rng);
            if (std::find(idx.begin(), idx.begin() + n, v) == idx.begin() + n) idx[static_cast<std::size_t>(n++)] = v;
        }
        Triplet t{card_from_index(idx[0]), card_from_index(idx[1]), card_from_index(idx[2])};
        return {t, rank_hand(t)};
    }
    std::uniform_int_distribution<int> pick_rank(0, hand_rank_count - 1);
    return sample_triplet_of_rank(regime, static_cast<HandRank>(pick_rank(rng)), rng);
}

} // namespace cbmaudit::scene
