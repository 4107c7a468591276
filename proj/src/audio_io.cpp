#include "estoisep/audio_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace estoisep {

namespace {

constexpr std::uint16_t kFormatPcm = 0x0001;
constexpr std::uint16_t kFormatFloat = 0x0003;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint32_t read_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
std::uint16_t read_u16(const unsigned char* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::vector<unsigned char>& v, std::uint32_t x) {
    v.push_back(x & 0xFF);
    v.push_back((x >> 8) & 0xFF);
    v.push_back((x >> 16) & 0xFF);
    v.push_back((x >> 24) & 0xFF);
}
void put_u16(std::vector<unsigned char>& v, std::uint16_t x) {
    v.push_back(x & 0xFF);
    v.push_back((x >> 8) & 0xFF);
}

double kaiser_i0(double x) {
    // modified Bessel I0, power series
    double sum = 1.0, term = 1.0;
    const double x2 = x * x / 4.0;
    for (int k = 1; k < 64; ++k) {
        term *= x2 / (static_cast<double>(k) * k);
        sum += term;
        if (term < 1e-18 * sum) break;
    }
    return sum;
}

}  // namespace

void AudioClip::validate() const {
    if (sample_rate <= 0) throw std::invalid_argument("AudioClip: sample_rate must be positive");
    for (double s : samples)
        if (!std::isfinite(s)) throw std::invalid_argument("AudioClip: non-finite sample");
}

AudioClip read_wav(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("read_wav: cannot open " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                     std::istreambuf_iterator<char>());
    if (bytes.size() < 44 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
        std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
        throw std::runtime_error("read_wav: not a RIFF/WAVE file: " + path);

    std::uint16_t format = 0, channels = 0, bits = 0;
    std::uint32_t rate = 0;
    const unsigned char* data = nullptr;
    std::size_t data_len = 0;

    std::size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const char* id = reinterpret_cast<const char*>(&bytes[pos]);
        const std::uint32_t chunk_len = read_u32(&bytes[pos + 4]);
        const std::size_t body = pos + 8;
        if (body + chunk_len > bytes.size()) break;
        if (std::memcmp(id, "fmt ", 4) == 0 && chunk_len >= 16) {
            format = read_u16(&bytes[body]);
            channels = read_u16(&bytes[body + 2]);
            rate = read_u32(&bytes[body + 4]);
            bits = read_u16(&bytes[body + 14]);
            if (format == kFormatExtensible && chunk_len >= 40)
                format = read_u16(&bytes[body + 24]);  // first word of the SubFormat GUID
        } else if (std::memcmp(id, "data", 4) == 0) {
            data = &bytes[body];
            data_len = chunk_len;
        }
        pos = body + chunk_len + (chunk_len & 1);  // chunks are word-aligned
    }

    if (channels == 0 || rate == 0) throw std::runtime_error("read_wav: missing fmt chunk: " + path);
    if (data == nullptr || data_len == 0)
        throw std::runtime_error("read_wav: no audio data in " + path);

    const bool pcm16 = format == kFormatPcm && bits == 16;
    const bool float32 = format == kFormatFloat && bits == 32;
    if (!pcm16 && !float32)
        throw std::runtime_error("read_wav: unsupported encoding (need 16-bit PCM or 32-bit float): " +
                                 path);

    const std::size_t bytes_per = bits / 8;
    const std::size_t frames = data_len / (bytes_per * channels);
    if (frames == 0) throw std::runtime_error("read_wav: zero-length audio in " + path);

    AudioClip clip;
    clip.sample_rate = static_cast<int>(rate);
    clip.samples.resize(frames);
    for (std::size_t i = 0; i < frames; ++i) {
        double acc = 0.0;
        for (std::uint16_t ch = 0; ch < channels; ++ch) {
            const unsigned char* p = data + (i * channels + ch) * bytes_per;
            if (pcm16) {
                std::int16_t s;
                std::memcpy(&s, p, 2);
                acc += static_cast<double>(s) / 32768.0;
            } else {
                float s;
                std::memcpy(&s, p, 4);
                acc += static_cast<double>(s);
            }
        }
        clip.samples[i] = acc / channels;
    }
    return clip;
}

void write_wav(const AudioClip& clip, const std::string& path) {
    clip.validate();
    if (clip.samples.empty()) throw std::invalid_argument("write_wav: empty clip");

    const std::uint32_t n = static_cast<std::uint32_t>(clip.samples.size());
    std::vector<unsigned char> out;
    out.reserve(44 + 2 * n);
    out.insert(out.end(), {'R', 'I', 'F', 'F'});
    put_u32(out, 36 + 2 * n);
    out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
    put_u32(out, 16);
    put_u16(out, kFormatPcm);
    put_u16(out, 1);
    put_u32(out, static_cast<std::uint32_t>(clip.sample_rate));
    put_u32(out, static_cast<std::uint32_t>(clip.sample_rate) * 2);
    put_u16(out, 2);
    put_u16(out, 16);
    out.insert(out.end(), {'d', 'a', 't', 'a'});
    put_u32(out, 2 * n);
    for (double s : clip.samples) {
        const double clamped = std::clamp(s, -1.0, 1.0);
        const long q = std::lround(clamped * 32768.0);
        const std::int16_t v = static_cast<std::int16_t>(std::clamp(q, -32768L, 32767L));
        put_u16(out, static_cast<std::uint16_t>(v));
    }

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("write_wav: cannot open " + path + " for writing");
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("write_wav: write failed: " + path);
}

AudioClip resample(const AudioClip& clip, int target_rate) {
    clip.validate();
    if (target_rate <= 0) throw std::invalid_argument("resample: target_rate must be positive");
    if (target_rate == clip.sample_rate) return clip;

    const double ratio = static_cast<double>(target_rate) / clip.sample_rate;
    const double cutoff = std::min(1.0, ratio);  // relative to input Nyquist
    constexpr int kZeroCrossings = 32;           // per side: 64-crossing kernel overall
    constexpr double kKaiserBeta = 9.0;
    const double half_width = kZeroCrossings / cutoff;
    const double i0_beta = kaiser_i0(kKaiserBeta);

    // kernel h(x) = cutoff * sinc(cutoff*x) * kaiser(x / half_width), tabulated on
    // [0, half_width] at 256 points per sinc zero crossing, linearly interpolated
    const double step = 1.0 / (cutoff * 256.0);
    const std::size_t table_len = static_cast<std::size_t>(std::ceil(half_width / step)) + 2;
    std::vector<double> table(table_len);
    for (std::size_t i = 0; i < table_len; ++i) {
        const double x = static_cast<double>(i) * step;
        const double u = x * cutoff;
        double sinc = 1.0;
        if (u != 0.0) {
            const double pu = 3.14159265358979323846 * u;
            sinc = std::sin(pu) / pu;
        }
        const double w = x / half_width;
        const double kaiser =
            w >= 1.0 ? 0.0
                     : kaiser_i0(kKaiserBeta * std::sqrt(std::max(0.0, 1.0 - w * w))) / i0_beta;
        table[i] = cutoff * sinc * kaiser;
    }
    const auto kernel = [&](double x) {
        const double t = std::abs(x) / step;
        const std::size_t i = static_cast<std::size_t>(t);
        if (i + 1 >= table_len) return 0.0;
        const double frac = t - static_cast<double>(i);
        return table[i] + frac * (table[i + 1] - table[i]);
    };

    const std::size_t in_len = clip.samples.size();
    const std::size_t out_len = static_cast<std::size_t>(
        (static_cast<std::uint64_t>(in_len) * target_rate + clip.sample_rate / 2) /
        clip.sample_rate);

    AudioClip out;
    out.sample_rate = target_rate;
    out.samples.resize(out_len);
    for (std::size_t k = 0; k < out_len; ++k) {
        const double center = static_cast<double>(k) / ratio;
        const long lo = std::lround(std::ceil(center - half_width));
        const long hi = std::lround(std::floor(center + half_width));
        double acc = 0.0;
        for (long m = std::max(0L, lo); m <= std::min(static_cast<long>(in_len) - 1, hi); ++m)
            acc += clip.samples[m] * kernel(center - m);
        out.samples[k] = acc;
    }
    return out;
}

}  // namespace estoisep
